//! Canonicalization of raw trajectory documents at ingest.
//!
//! Descriptions that already parse as calls are kept. Others go to the
//! converter, which may split one description into several calls, so steps
//! are renumbered by position afterwards.

use std::path::PathBuf;

use super::{
    call_with_retry, parse_conversion_reply, render_conversion_prompt, AnnotatorClient, CallError,
    RetryPolicy,
};
use crate::dataset::{annotate_from_raw, DatasetError, RawDataset};
use crate::grammar::{CanonicalAction, GrammarError};
use crate::model::Dataset;
use crate::parallel::{par_map, Parallelism};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{file}: step {step} could not be converted: {source}")]
    Conversion {
        file: PathBuf,
        step: usize,
        #[source]
        source: CallError,
    },
    #[error("{file}: step {step}: converter produced an invalid call: {source}")]
    InvalidRecord {
        file: PathBuf,
        step: usize,
        #[source]
        source: GrammarError,
    },
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::Dataset(e) => e.code(),
            IngestError::Conversion { .. } => "CONVERSION_FAILED",
            IngestError::InvalidRecord { .. } => "NOT_CANONICAL",
        }
    }
}

/// A conversion below the trust threshold, kept in the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LowTrust {
    pub file: PathBuf,
    pub step: usize,
    pub description: String,
    pub call: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConversionReport {
    /// Descriptions that parsed as calls directly.
    pub passed_through: usize,
    /// Descriptions sent to the converter.
    pub converted: usize,
    /// Calls emitted by the converter.
    pub emitted: usize,
    pub low_trust: Vec<LowTrust>,
}

struct DocResult {
    actions: Vec<CanonicalAction>,
    report: ConversionReport,
}

fn canonicalize_doc(
    raw: &RawDataset,
    index: usize,
    converter: Option<&dyn AnnotatorClient>,
    retry: &RetryPolicy,
) -> Result<DocResult, IngestError> {
    let (file, doc) = &raw.trajectories[index];
    let context = raw
        .task(&doc.task_id)
        .map(|t| t.intent.clone())
        .unwrap_or_default();
    let mut actions: Vec<CanonicalAction> = Vec::with_capacity(doc.actions.len());
    let mut report = ConversionReport::default();
    for (position, step) in doc.actions.iter().enumerate() {
        let parse_err = match CanonicalAction::parse(&step.description) {
            Ok(a) => {
                actions.push(annotate_from_raw(a, step));
                report.passed_through += 1;
                continue;
            }
            Err(e) => e,
        };
        let Some(client) = converter else {
            return Err(DatasetError::NotCanonical {
                file: file.clone(),
                step: position,
                source: parse_err,
            }
            .into());
        };
        let previous: Vec<String> = actions
            .iter()
            .map(CanonicalAction::canonical_string)
            .collect();
        let prompt = render_conversion_prompt(&step.description, &context, &previous);
        let (records, _) =
            call_with_retry(client, &prompt, retry, |r| parse_conversion_reply(&r.text)).map_err(
                |(source, _)| IngestError::Conversion {
                    file: file.clone(),
                    step: position,
                    source,
                },
            )?;
        report.converted += 1;
        for rec in records {
            let action = rec
                .to_action()
                .map_err(|source| IngestError::InvalidRecord {
                    file: file.clone(),
                    step: position,
                    source,
                })?
                .with_source_url(step.url.clone());
            if rec.low_trust() {
                report.low_trust.push(LowTrust {
                    file: file.clone(),
                    step: position,
                    description: step.description.clone(),
                    call: action.canonical_string(),
                    confidence: rec.confidence,
                });
            }
            report.emitted += 1;
            actions.push(action);
        }
    }
    Ok(DocResult { actions, report })
}

/// Resolves `raw` into a dataset, converting free-text steps with
/// `converter`. Without a converter every step must already be a call.
pub fn canonicalize(
    raw: RawDataset,
    converter: Option<&dyn AnnotatorClient>,
    retry: &RetryPolicy,
    parallelism: Parallelism,
) -> Result<(Dataset, ConversionReport), IngestError> {
    let indices: Vec<usize> = (0..raw.trajectories.len()).collect();
    let results = par_map(&indices, parallelism, |&i| {
        canonicalize_doc(&raw, i, converter, retry)
    });
    let mut report = ConversionReport::default();
    let mut all_actions = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        report.passed_through += r.report.passed_through;
        report.converted += r.report.converted;
        report.emitted += r.report.emitted;
        report.low_trust.extend(r.report.low_trust);
        all_actions.push(r.actions);
    }
    Ok((raw.assemble(all_actions)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::MockConverterClient;
    use crate::dataset::TrajectoryDoc;
    use crate::model::{Outcome, RawAction, TaskSpec};

    fn raw(descriptions: &[&str]) -> RawDataset {
        RawDataset {
            tasks: vec![(
                PathBuf::from("tasks/t.json"),
                TaskSpec {
                    task_id: "t".into(),
                    intent: "Buy socks".into(),
                    reference: Default::default(),
                },
            )],
            trajectories: vec![(
                PathBuf::from("trajectories/a.json"),
                TrajectoryDoc {
                    task_id: "t".into(),
                    agent_id: "a".into(),
                    run_index: None,
                    outcome: Outcome::Unjudged,
                    judge_confidence: None,
                    final_message: None,
                    actions: descriptions
                        .iter()
                        .enumerate()
                        .map(|(i, d)| RawAction {
                            step_index: i,
                            description: d.to_string(),
                            url: format!("http://shop/{i}"),
                            necessary: None,
                            confidence: None,
                            pre: None,
                        })
                        .collect(),
                },
            )],
        }
    }

    #[test]
    fn converts_free_text_and_renumbers() {
        let client = MockConverterClient;
        let (d, report) = canonicalize(
            raw(&[
                "goto(url='http://shop/')",
                "Click the cart. Then checkout.",
                "went back",
            ]),
            Some(&client),
            &RetryPolicy::immediate(1),
            Parallelism::Sequential,
        )
        .unwrap();
        let calls: Vec<String> = d.trajectories[0]
            .actions
            .iter()
            .map(|a| a.canonical_string())
            .collect();
        assert_eq!(
            calls,
            vec![
                "goto(url='http://shop/')",
                "click(text='cart')",
                "click(text='checkout')",
                "back()"
            ]
        );
        assert_eq!(report.passed_through, 1);
        assert_eq!(report.converted, 2);
        assert_eq!(report.emitted, 3);
        assert_eq!(report.low_trust.len(), 1);
        assert_eq!(d.trajectories[0].actions[3].source_url, "http://shop/2");
    }

    #[test]
    fn canonical_input_needs_no_converter() {
        let (d, report) = canonicalize(
            raw(&["back()", "refresh()"]),
            None,
            &RetryPolicy::immediate(1),
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(d.action_count(), 2);
        assert_eq!(report.converted, 0);
        let err = canonicalize(
            raw(&["went back"]),
            None,
            &RetryPolicy::immediate(1),
            Parallelism::Sequential,
        )
        .unwrap_err();
        assert_eq!(err.code(), "NOT_CANONICAL");
    }
}
