//! Outcome labeling of a whole dataset.

use super::{
    call_with_retry, parse_judge_reply, render_judge_prompt, AnnotatorClient, JudgeVerdict,
    RetryPolicy,
};
use crate::model::{Dataset, Outcome};
use crate::parallel::{par_map, Parallelism};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JudgeOptions {
    /// Re-judge trajectories that already carry an outcome.
    pub force: bool,
    pub retry: RetryPolicy,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeFailure {
    pub task_id: String,
    pub agent_id: String,
    pub run_index: u32,
    pub attempts: u32,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgeReport {
    pub judged: usize,
    /// Already judged and left alone.
    pub skipped: usize,
    pub failures: Vec<JudgeFailure>,
}

impl JudgeReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Fills outcomes and judge confidences. Replies are collected first and
/// applied in dataset order. A trajectory whose every attempt fails is left
/// unjudged and listed in the report.
pub fn judge(
    dataset: &Dataset,
    client: &dyn AnnotatorClient,
    opts: &JudgeOptions,
) -> (Dataset, JudgeReport) {
    let todo: Vec<usize> = dataset
        .trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| opts.force || !t.outcome.is_judged())
        .map(|(i, _)| i)
        .collect();
    let replies = par_map(&todo, opts.parallelism, |&i| {
        let t = &dataset.trajectories[i];
        let task = &dataset.tasks[&t.task_id];
        let prompt = render_judge_prompt(task, t);
        call_with_retry(client, &prompt, &opts.retry, |r| {
            parse_judge_reply(&r.text, r.confidence)
        })
    });

    let mut out = dataset.clone();
    let mut report = JudgeReport {
        skipped: dataset.trajectories.len() - todo.len(),
        ..JudgeReport::default()
    };
    for (i, result) in todo.into_iter().zip(replies) {
        let t = &mut out.trajectories[i];
        match result {
            Ok((
                JudgeVerdict {
                    outcome,
                    confidence,
                    ..
                },
                _,
            )) => {
                t.outcome = outcome;
                t.judge_confidence = Some(confidence);
                report.judged += 1;
            }
            Err((err, attempts)) => {
                t.outcome = Outcome::Unjudged;
                t.judge_confidence = None;
                report.failures.push(JudgeFailure {
                    task_id: t.task_id.clone(),
                    agent_id: t.agent_id.clone(),
                    run_index: t.run_index,
                    attempts,
                    code: err.code(),
                    message: err.to_string(),
                });
            }
        }
    }
    (out, report)
}
