//! Parsing of judge and converter replies.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::grammar::{ActionKind, CanonicalAction, GrammarError};
use crate::model::Outcome;

/// Conversions below this confidence are kept but marked low-trust.
pub const LOW_TRUST_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ReplyError {
    pub code: &'static str,
    pub message: String,
    /// The reply exactly as received.
    pub raw: String,
}

impl ReplyError {
    fn new(code: &'static str, message: impl Into<String>, raw: &str) -> Self {
        ReplyError {
            code,
            message: message.into(),
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    /// Always `Success` or `Failure`.
    pub outcome: Outcome,
    pub explanation: String,
    pub confidence: f64,
}

/// The first non-blank line, trimmed, must be exactly `SUCCESS` or
/// `FAILURE`. `confidence` comes from the client's side channel and defaults
/// to 1.
pub fn parse_judge_reply(text: &str, confidence: Option<f64>) -> Result<JudgeVerdict, ReplyError> {
    let mut lines = text.lines();
    let first = lines
        .by_ref()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| ReplyError::new("EMPTY_REPLY", "reply has no verdict line", text))?;
    let outcome = match first {
        "SUCCESS" => Outcome::Success,
        "FAILURE" => Outcome::Failure,
        other => {
            return Err(ReplyError::new(
                "INVALID_VERDICT",
                format!("first line must be SUCCESS or FAILURE, got {other:?}"),
                text,
            ))
        }
    };
    let confidence = confidence.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ReplyError::new(
            "BAD_CONFIDENCE",
            format!("confidence {confidence} outside [0, 1]"),
            text,
        ));
    }
    let explanation = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    Ok(JudgeVerdict {
        outcome,
        explanation,
        confidence,
    })
}

/// A dependency reference such as `{"id": "step 2"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreRef {
    pub id: String,
    /// Trailing integer of `id`, when it has one.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRecord {
    pub function_name: String,
    pub parameters: Vec<String>,
    pub named_parameters: BTreeMap<String, String>,
    pub confidence: f64,
    pub necessary: bool,
    pub pre: Option<PreRef>,
    pub reasoning: String,
}

impl ConversionRecord {
    pub fn low_trust(&self) -> bool {
        self.confidence < LOW_TRUST_CONFIDENCE
    }

    /// The record as a validated call carrying its annotations.
    pub fn to_action(&self) -> Result<CanonicalAction, GrammarError> {
        let kind = ActionKind::from_name(&self.function_name)
            .ok_or_else(|| GrammarError::UnknownFunction(self.function_name.clone()))?;
        let mut action = CanonicalAction::new(
            kind,
            self.named_parameters.iter().map(|(k, v)| (k, v.clone())),
        )?
        .with_annotations(self.confidence, Some(self.necessary));
        action.pre_dependency = self.pre.as_ref().and_then(|p| p.step);
        Ok(action)
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn trailing_number(id: &str) -> Option<usize> {
    let digits: String = id
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Parameter values in signature order for known functions, so they can be
/// compared with the positional list.
fn positional_view(function: &str, named: &BTreeMap<String, String>) -> Vec<String> {
    match ActionKind::from_name(function) {
        Some(kind) => {
            let known: Vec<String> = kind
                .signature()
                .iter()
                .filter_map(|spec| named.get(spec.key.name()).cloned())
                .collect();
            if known.len() == named.len() {
                known
            } else {
                named.values().cloned().collect()
            }
        }
        None => named.values().cloned().collect(),
    }
}

fn record_from(v: &Value, index: usize, raw: &str) -> Result<ConversionRecord, ReplyError> {
    let at = |msg: &str| format!("record {index}: {msg}");
    let obj = v
        .as_object()
        .ok_or_else(|| ReplyError::new("INVALID_JSON", at("not an object"), raw))?;
    let function_name = obj
        .get("functionName")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ReplyError::new("NEED_FUNCTION_NAME", at("missing \"functionName\""), raw))?
        .to_string();
    let named_obj = obj
        .get("namedParameters")
        .and_then(Value::as_object)
        .ok_or_else(|| {
            ReplyError::new(
                "NEED_NAMED_PARAMETERS",
                at("missing \"namedParameters\" object"),
                raw,
            )
        })?;
    let mut named_parameters = BTreeMap::new();
    for (k, v) in named_obj {
        if v.is_null() {
            continue;
        }
        let text = scalar_text(v).ok_or_else(|| {
            ReplyError::new(
                "INCONSISTENT_PARAMS",
                at(&format!("parameter {k:?} is not a scalar")),
                raw,
            )
        })?;
        named_parameters.insert(k.clone(), text);
    }
    let necessary = obj
        .get("necessary")
        .and_then(Value::as_bool)
        .ok_or_else(|| {
            ReplyError::new("NEED_NECESSARY", at("missing boolean \"necessary\""), raw)
        })?;
    let confidence = obj
        .get("confidence")
        .and_then(Value::as_f64)
        .filter(|c| (0.0..=1.0).contains(c))
        .ok_or_else(|| {
            ReplyError::new(
                "BAD_CONFIDENCE",
                at("\"confidence\" must be a number in [0, 1]"),
                raw,
            )
        })?;
    let parameters = match obj.get("parameters") {
        None | Some(Value::Null) => positional_view(&function_name, &named_parameters),
        Some(Value::Array(items)) => {
            let values: Vec<String> = items
                .iter()
                .filter(|v| !v.is_null())
                .map(|v| scalar_text(v).unwrap_or_default())
                .collect();
            let mut expected = positional_view(&function_name, &named_parameters);
            let mut got = values.clone();
            if ActionKind::from_name(&function_name).is_none() {
                expected.sort();
                got.sort();
            }
            if got != expected {
                return Err(ReplyError::new(
                    "INCONSISTENT_PARAMS",
                    at("\"parameters\" disagrees with \"namedParameters\""),
                    raw,
                ));
            }
            values
        }
        Some(_) => {
            return Err(ReplyError::new(
                "INCONSISTENT_PARAMS",
                at("\"parameters\" is not an array"),
                raw,
            ));
        }
    };
    let pre = match obj.get("pre") {
        None | Some(Value::Null) => None,
        Some(p) => {
            let id = p
                .get("id")
                .and_then(scalar_text)
                .or_else(|| scalar_text(p))
                .unwrap_or_default();
            Some(PreRef {
                step: trailing_number(&id),
                id,
            })
        }
    };
    let reasoning = obj
        .get("reasoning")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok(ConversionRecord {
        function_name,
        parameters,
        named_parameters,
        confidence,
        necessary,
        pre,
        reasoning,
    })
}

/// Accepts one object or an array of objects. Markdown code fences around
/// the JSON are tolerated.
pub fn parse_conversion_reply(text: &str) -> Result<Vec<ConversionRecord>, ReplyError> {
    let body = strip_fence(text.trim());
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ReplyError::new("INVALID_JSON", e.to_string(), text))?;
    match &value {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| record_from(v, i, text))
            .collect(),
        Value::Object(_) => Ok(vec![record_from(&value, 0, text)?]),
        _ => Err(ReplyError::new(
            "INVALID_JSON",
            "expected an object or an array",
            text,
        )),
    }
}

fn strip_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}
