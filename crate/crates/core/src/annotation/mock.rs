//! Deterministic offline annotators.
//!
//! Both mocks read only the rendered prompt, so they exercise the same
//! rendering path as a live model and their replies are pure functions of
//! `(system, user)`.

use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde_json::{json, Value};

use super::{AnnotatorClient, ClientError, ClientIdentity, Reply};
use crate::model::Outcome;

/// Text between the first `start` and the following `end`.
fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn quoted_line<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(label))
        .and_then(|rest| rest.strip_prefix('"'))
        .and_then(|rest| rest.strip_suffix('"'))
}

/// Judges by the reference rules of the prompt: the exact answer must appear
/// verbatim, every must-include item and at least one fuzzy item must appear
/// ignoring case. Items are read back by splitting on `", "`. Without any
/// reference the configured default outcome is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct MockJudgeClient {
    pub default_outcome: Outcome,
    /// Reported on the confidence channel when set.
    pub confidence: Option<f64>,
}

impl Default for MockJudgeClient {
    fn default() -> Self {
        MockJudgeClient {
            default_outcome: Outcome::Failure,
            confidence: None,
        }
    }
}

impl MockJudgeClient {
    fn verdict(&self, user: &str) -> (bool, String) {
        let final_message =
            between(user, "Final Message:\n\"", "\"\n\nAction Sequence:").unwrap_or_default();
        let actions =
            between(user, "Action Sequence:\n", "\n\nEVALUATION CRITERIA (").unwrap_or_default();
        let haystack = format!("{final_message}\n{actions}");
        let lower = haystack.to_lowercase();
        let items = |label| -> Vec<String> {
            quoted_line(user, label)
                .map(|s| s.split(", ").map(str::to_lowercase).collect())
                .unwrap_or_default()
        };
        let exact = quoted_line(user, "- Exact match expected: ");
        let must = items("- Must include all of: ");
        let fuzzy = items("- Fuzzy match acceptable: ");
        if exact.is_none() && must.is_empty() && fuzzy.is_empty() {
            return (
                self.default_outcome == Outcome::Success,
                "No reference answer to check against.".into(),
            );
        }
        if let Some(x) = exact {
            if !haystack.contains(x) {
                return (
                    false,
                    format!("Exact answer \"{x}\" not found in the trajectory."),
                );
            }
        }
        if let Some(m) = must.iter().find(|m| !lower.contains(m.as_str())) {
            return (
                false,
                format!("Required item \"{m}\" not found in the trajectory."),
            );
        }
        if !fuzzy.is_empty() && !fuzzy.iter().any(|f| lower.contains(f.as_str())) {
            return (
                false,
                "No acceptable answer found in the trajectory.".into(),
            );
        }
        (true, "Reference answer found in the trajectory.".into())
    }
}

impl AnnotatorClient for MockJudgeClient {
    fn complete(&self, _system: &str, user: &str) -> Result<Reply, ClientError> {
        let (ok, why) = self.verdict(user);
        Ok(Reply {
            text: format!("{}\n{why}", if ok { "SUCCESS" } else { "FAILURE" }),
            confidence: self.confidence,
        })
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity {
            backend: "mock".into(),
            endpoint: None,
            model: "rule-judge".into(),
            temperature: None,
        }
    }
}

pub const RULE_CONFIDENCE: f64 = 0.9;
pub const FALLBACK_CONFIDENCE: f64 = 0.3;

/// Action name and parameters produced from a match.
type Emit = fn(&Captures) -> (&'static str, Vec<(&'static str, String)>);

struct Rule {
    name: &'static str,
    pattern: Regex,
    emit: Emit,
}

fn cap(c: &Captures, name: &str) -> Option<String> {
    c.name(name)
        .map(|m| m.as_str().trim().to_string())
        .filter(|s| !s.is_empty())
}

fn with_element(
    mut params: Vec<(&'static str, String)>,
    c: &Captures,
) -> Vec<(&'static str, String)> {
    if let Some(el) = cap(c, "el") {
        params.push(("element", el.replace(['\'', '"'], "")));
    }
    params
}

const Q: &str = r#"['"‘’“”](?P<q>[^'"‘’“”]*)['"‘’“”]"#;

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let re = |p: &str| Regex::new(&format!("(?i)^{}$", p.replace("{Q}", Q))).expect("rule patterns compile");
        vec![
            Rule {
                name: "type",
                pattern: re(r"(?:typed|types|type|entered|enter|input|filled in|fill in)\s+{Q}(?:\s+(?:into|in|on)\s+(?:the\s+)?(?P<el>.+?))?"),
                emit: |c| ("type", with_element(vec![("text", cap(c, "q").unwrap_or_default())], c)),
            },
            Rule {
                name: "select",
                pattern: re(r"(?:selected|selects|select|chose|choose|picked|pick)\s+{Q}(?:\s+(?:from|in)\s+(?:the\s+)?(?P<el>.+?))?"),
                emit: |c| ("select", with_element(vec![("value", cap(c, "q").unwrap_or_default())], c)),
            },
            Rule {
                name: "hover",
                pattern: re(r"(?:hovered|hovers|hover)(?:\s+over)?(?:\s+the)?\s+{Q}(?:\s+(?P<el>[a-z]+))?"),
                emit: |c| ("hover", with_element(vec![("text", cap(c, "q").unwrap_or_default())], c)),
            },
            Rule {
                name: "click-quoted",
                pattern: re(r"(?:clicked|clicks|click|clicking|pressed|press|tapped|tap)(?:\s+on)?(?:\s+the)?\s+{Q}(?:\s+(?P<el>button|link|tab|icon|checkbox|menu|option|field|image))?"),
                emit: |c| ("click", with_element(vec![("text", cap(c, "q").unwrap_or_default())], c)),
            },
            Rule {
                name: "press",
                pattern: re(r"(?:pressed|presses|press)\s+(?:the\s+)?(?P<t>[a-z0-9][\w ]*?)(?:\s+button)?"),
                emit: |c| ("click", vec![("text", cap(c, "t").unwrap_or_default()), ("element", "button".into())]),
            },
            Rule {
                name: "click-bare",
                pattern: re(r"(?:clicked|clicks|click)(?:\s+on)?(?:\s+the)?\s+(?P<t>[a-z0-9][\w ]*?)(?:\s+(?P<el>button|link|tab|icon))?"),
                emit: |c| ("click", with_element(vec![("text", cap(c, "t").unwrap_or_default())], c)),
            },
            Rule {
                name: "back",
                pattern: re(r"(?:went|go|goes|navigated|navigate|going)\s+back\b.*|back"),
                emit: |_| ("back", Vec::new()),
            },
            Rule {
                name: "refresh",
                pattern: re(r"(?:refreshed|refreshes|refresh|reloaded|reloads|reload)\b.*"),
                emit: |_| ("refresh", Vec::new()),
            },
            Rule {
                name: "scroll",
                pattern: re(r"(?:scrolled|scrolls|scroll)\s+(?P<dir>up|down)(?:\s+(?:by\s+)?(?P<amt>\d+(?:\.\d+)?))?.*"),
                emit: |c| {
                    let mut p = vec![("direction", cap(c, "dir").unwrap_or_default().to_lowercase())];
                    if let Some(a) = cap(c, "amt") {
                        p.push(("amount", a));
                    }
                    ("scroll", p)
                },
            },
            Rule {
                name: "wait",
                pattern: re(r"(?:waited|waits|wait)(?:\s+for)?\s+(?P<s>\d+(?:\.\d+)?)\s*(?:s|sec|secs|seconds?)?"),
                emit: |c| ("wait", vec![("seconds", cap(c, "s").unwrap_or_default())]),
            },
            Rule {
                name: "goto",
                pattern: re(r#"(?:went to|go to|goes to|navigated to|navigate to|opened|open|visited|visit|goto)\s+(?:the\s+)?(?:url\s+)?['"]?(?P<url>[^\s'"]+)['"]?"#),
                emit: |c| ("goto", vec![("url", cap(c, "url").unwrap_or_default())]),
            },
        ]
    })
}

/// Sentence split on `.`, `!` or `?` followed by whitespace or the end.
pub fn split_sentences(text: &str) -> Vec<String> {
    static SPLIT: OnceLock<Regex> = OnceLock::new();
    let split = SPLIT.get_or_init(|| Regex::new(r"[.!?]+(?:\s+|$)").expect("valid"));
    split
        .split(text)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn strip_lead(sentence: &str) -> &str {
    let mut s = sentence.trim();
    loop {
        let lower = s.to_ascii_lowercase();
        let Some(n) = ["then ", "and ", "i ", "finally ", "next "]
            .iter()
            .find(|p| lower.starts_with(*p))
            .map(|p| p.len())
        else {
            return s;
        };
        s = s[n..].trim_start();
    }
}

fn record(
    function: &str,
    params: Vec<(&'static str, String)>,
    confidence: f64,
    reasoning: String,
) -> Value {
    let named: serde_json::Map<String, Value> = params
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    json!({
        "functionName": function,
        "parameters": params.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(),
        "namedParameters": named,
        "confidence": confidence,
        "necessary": true,
        "pre": null,
        "reasoning": reasoning,
    })
}

/// Converts one sentence with the rule table, or falls back to a low-trust
/// click on the longest quoted token (the whole sentence when none).
pub fn convert_sentence(sentence: &str) -> Value {
    let s = strip_lead(sentence);
    for rule in rules() {
        if let Some(c) = rule.pattern.captures(s) {
            let (function, params) = (rule.emit)(&c);
            return record(
                function,
                params,
                RULE_CONFIDENCE,
                format!("matched rule {}", rule.name),
            );
        }
    }
    static QUOTED: OnceLock<Regex> = OnceLock::new();
    let quoted = QUOTED.get_or_init(|| Regex::new(Q).expect("valid"));
    let text = quoted
        .captures_iter(s)
        .filter_map(|c| c.name("q").map(|m| m.as_str().to_string()))
        .filter(|q| !q.is_empty())
        .fold(None::<String>, |best, q| match best {
            Some(b) if b.chars().count() >= q.chars().count() => Some(b),
            _ => Some(q),
        })
        .unwrap_or_else(|| s.to_string());
    record(
        "click",
        vec![("text", text)],
        FALLBACK_CONFIDENCE,
        "no rule matched".into(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockConverterClient;

impl AnnotatorClient for MockConverterClient {
    fn complete(&self, _system: &str, user: &str) -> Result<Reply, ClientError> {
        let description = between(user, "Description:\n\"", "\"\n\nTask Context:")
            .ok_or_else(|| ClientError::Fatal("prompt has no description block".into()))?;
        let records: Vec<Value> = split_sentences(description)
            .iter()
            .map(|s| convert_sentence(s))
            .collect();
        Ok(Reply::text(
            serde_json::to_string_pretty(&records).expect("json values serialize"),
        ))
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity {
            backend: "mock".into(),
            endpoint: None,
            model: "rule-converter".into(),
            temperature: None,
        }
    }
}
