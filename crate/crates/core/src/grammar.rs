//! The nine-function action DSL.
//!
//! Every trajectory step is reduced to one call of the form
//!
//! ```text
//! call  := kind '(' [param (',' param)*] ')'
//! param := key '=' value
//! value := squoted | dquoted | number
//! ```
//!
//! Kind names are matched case-insensitively. Values are compared
//! case-sensitively. The canonical serialization always single-quotes values,
//! escapes `'` and `\` with a backslash, and emits parameters in the fixed
//! per-kind signature order, so two actions with the same kind and parameters
//! always serialize to the same string.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    Select,
    Hover,
    Wait,
    Goto,
    Back,
    Refresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKey {
    Text,
    Element,
    Direction,
    Amount,
    Value,
    Seconds,
    Url,
}

/// One slot of a per-kind signature.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub key: ParamKey,
    pub required: bool,
}

const fn req(key: ParamKey) -> ParamSpec {
    ParamSpec {
        key,
        required: true,
    }
}

const fn opt(key: ParamKey) -> ParamSpec {
    ParamSpec {
        key,
        required: false,
    }
}

impl ActionKind {
    pub const ALL: [ActionKind; 9] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::Select,
        ActionKind::Hover,
        ActionKind::Wait,
        ActionKind::Goto,
        ActionKind::Back,
        ActionKind::Refresh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Type => "type",
            ActionKind::Scroll => "scroll",
            ActionKind::Select => "select",
            ActionKind::Hover => "hover",
            ActionKind::Wait => "wait",
            ActionKind::Goto => "goto",
            ActionKind::Back => "back",
            ActionKind::Refresh => "refresh",
        }
    }

    /// Case-insensitive lookup.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|kind| kind.name().eq_ignore_ascii_case(name))
    }

    pub fn signature(self) -> &'static [ParamSpec] {
        use ParamKey::*;
        match self {
            ActionKind::Click | ActionKind::Hover | ActionKind::Type => {
                const S: [ParamSpec; 2] = [req(Text), opt(Element)];
                &S
            }
            ActionKind::Scroll => {
                const S: [ParamSpec; 2] = [req(Direction), opt(Amount)];
                &S
            }
            ActionKind::Select => {
                const S: [ParamSpec; 2] = [req(Value), opt(Element)];
                &S
            }
            ActionKind::Wait => {
                const S: [ParamSpec; 1] = [req(Seconds)];
                &S
            }
            ActionKind::Goto => {
                const S: [ParamSpec; 1] = [req(Url)];
                &S
            }
            ActionKind::Back | ActionKind::Refresh => &[],
        }
    }

    fn slot(self, key: ParamKey) -> Option<usize> {
        self.signature().iter().position(|spec| spec.key == key)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ParamKey {
    pub fn name(self) -> &'static str {
        match self {
            ParamKey::Text => "text",
            ParamKey::Element => "element",
            ParamKey::Direction => "direction",
            ParamKey::Amount => "amount",
            ParamKey::Value => "value",
            ParamKey::Seconds => "seconds",
            ParamKey::Url => "url",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        use ParamKey::*;
        [Text, Element, Direction, Amount, Value, Seconds, Url]
            .into_iter()
            .find(|key| key.name().eq_ignore_ascii_case(name))
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ParamKey::Amount | ParamKey::Seconds)
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("{kind}() is missing required parameter `{key}`")]
    MissingParameter { kind: ActionKind, key: ParamKey },
    #[error("{kind}() does not take parameter `{key}`")]
    UnknownParameter { kind: ActionKind, key: String },
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("malformed quoting at offset {0}")]
    MalformedQuoting(usize),
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax {
        offset: usize,
        expected: &'static str,
    },
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    InvalidValue {
        key: ParamKey,
        value: String,
        reason: &'static str,
    },
}

impl GrammarError {
    pub fn code(&self) -> &'static str {
        match self {
            GrammarError::UnknownFunction(_) => "UNKNOWN_FUNCTION",
            GrammarError::MissingParameter { .. } => "MISSING_PARAMETER",
            GrammarError::UnknownParameter { .. } => "UNKNOWN_PARAMETER",
            GrammarError::DuplicateParameter(_) => "DUPLICATE_PARAMETER",
            GrammarError::MalformedQuoting(_) => "MALFORMED_QUOTING",
            GrammarError::Syntax { .. } => "SYNTAX",
            GrammarError::InvalidValue { .. } => "INVALID_VALUE",
        }
    }
}

/// A validated call in the action DSL plus its annotations.
///
/// `kind` and `params` are private so that every instance satisfies the
/// per-kind signature. The annotation fields are free to change.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalAction {
    kind: ActionKind,
    params: Vec<(ParamKey, String)>,
    /// Conversion confidence in `[0, 1]`.
    pub confidence: f64,
    /// Necessity label; `None` when the action was never annotated.
    pub necessary: Option<bool>,
    /// Step this action depends on, if the annotator reported one.
    pub pre_dependency: Option<usize>,
    /// URL the action was executed at.
    pub source_url: String,
}

impl CanonicalAction {
    /// Validates `params` against the signature of `kind` and sorts them into
    /// signature order. Numeric values are normalized (`2.0` becomes `2`).
    pub fn new<K, V>(
        kind: ActionKind,
        params: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self, GrammarError>
    where
        K: AsRef<str>,
        V: Into<String>,
    {
        let signature = kind.signature();
        let mut slots: Vec<Option<String>> = vec![None; signature.len()];
        for (key, value) in params {
            let key_text = key.as_ref();
            let key =
                ParamKey::from_name(key_text).ok_or_else(|| GrammarError::UnknownParameter {
                    kind,
                    key: key_text.to_string(),
                })?;
            let slot = kind
                .slot(key)
                .ok_or_else(|| GrammarError::UnknownParameter {
                    kind,
                    key: key_text.to_string(),
                })?;
            if slots[slot].is_some() {
                return Err(GrammarError::DuplicateParameter(key.name().to_string()));
            }
            slots[slot] = Some(normalize_value(kind, key, value.into())?);
        }

        let mut ordered = Vec::with_capacity(signature.len());
        for (spec, value) in signature.iter().zip(slots) {
            match value {
                Some(value) => ordered.push((spec.key, value)),
                None if spec.required => {
                    return Err(GrammarError::MissingParameter {
                        kind,
                        key: spec.key,
                    })
                }
                None => {}
            }
        }

        Ok(CanonicalAction {
            kind,
            params: ordered,
            confidence: 1.0,
            necessary: None,
            pre_dependency: None,
            source_url: String::new(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        Parser::new(text).call()
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn params(&self) -> &[(ParamKey, String)] {
        &self.params
    }

    pub fn param(&self, key: ParamKey) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Necessity with the unannotated default applied.
    pub fn is_necessary(&self) -> bool {
        self.necessary.unwrap_or(true)
    }

    pub fn with_source_url(mut self, url: impl Into<String>) -> Self {
        self.source_url = url.into();
        self
    }

    pub fn with_annotations(mut self, confidence: f64, necessary: Option<bool>) -> Self {
        self.confidence = confidence;
        self.necessary = necessary;
        self
    }

    /// `true` when kind and parameters match, ignoring annotations.
    pub fn same_call(&self, other: &CanonicalAction) -> bool {
        self.kind == other.kind && self.params == other.params
    }

    pub fn canonical_string(&self) -> String {
        let mut out = String::with_capacity(16 + self.params.len() * 16);
        out.push_str(self.kind.name());
        out.push('(');
        for (i, (key, value)) in self.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(key.name());
            out.push_str("='");
            for c in value.chars() {
                if c == '\'' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('\'');
        }
        out.push(')');
        out
    }
}

impl fmt::Display for CanonicalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

impl FromStr for CanonicalAction {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CanonicalAction::parse(s)
    }
}

/// Free-function form of [`CanonicalAction::parse`].
pub fn parse(text: &str) -> Result<CanonicalAction, GrammarError> {
    CanonicalAction::parse(text)
}

/// Free-function form of [`CanonicalAction::canonical_string`].
pub fn canonical_string(action: &CanonicalAction) -> String {
    action.canonical_string()
}

fn normalize_value(kind: ActionKind, key: ParamKey, value: String) -> Result<String, GrammarError> {
    if key.is_numeric() {
        let number: f64 = value
            .trim()
            .parse()
            .map_err(|_| GrammarError::InvalidValue {
                key,
                value: value.clone(),
                reason: "not a number",
            })?;
        if !number.is_finite() {
            return Err(GrammarError::InvalidValue {
                key,
                value,
                reason: "not finite",
            });
        }
        if kind == ActionKind::Wait && number < 0.0 {
            return Err(GrammarError::InvalidValue {
                key,
                value,
                reason: "must be non-negative",
            });
        }
        return Ok(format_number(number));
    }
    if key == ParamKey::Direction && value != "up" && value != "down" {
        return Err(GrammarError::InvalidValue {
            key,
            value,
            reason: "direction must be `up` or `down`",
        });
    }
    Ok(value)
}

/// Shortest round-tripping decimal form without a trailing `.0`.
pub(crate) fn format_number(number: f64) -> String {
    if number == 0.0 {
        // folds -0 into 0
        return "0".to_string();
    }
    format!("{number}")
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, want: char, expected: &'static str) -> Result<(), GrammarError> {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.bump();
            Ok(())
        } else {
            Err(GrammarError::Syntax {
                offset: self.pos,
                expected,
            })
        }
    }

    fn ident(&mut self, expected: &'static str) -> Result<&'a str, GrammarError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        if start == self.pos {
            return Err(GrammarError::Syntax {
                offset: start,
                expected,
            });
        }
        Ok(&self.src[start..self.pos])
    }

    fn value(&mut self) -> Result<String, GrammarError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(quote @ ('\'' | '"')) => {
                self.bump();
                let mut out = String::new();
                loop {
                    match self.bump() {
                        None => return Err(GrammarError::MalformedQuoting(start)),
                        Some('\\') => match self.bump() {
                            Some(c) => out.push(c),
                            None => return Err(GrammarError::MalformedQuoting(start)),
                        },
                        Some(c) if c == quote => return Ok(out),
                        Some(c) => out.push(c),
                    }
                }
            }
            Some(_) => {
                while self
                    .peek()
                    .is_some_and(|c| !c.is_whitespace() && c != ',' && c != ')')
                {
                    self.bump();
                }
                let bare = &self.src[start..self.pos];
                if bare.contains(['\'', '"']) {
                    return Err(GrammarError::MalformedQuoting(start));
                }
                if bare.is_empty() || bare.parse::<f64>().is_err() {
                    return Err(GrammarError::Syntax {
                        offset: start,
                        expected: "quoted value or number",
                    });
                }
                Ok(bare.to_string())
            }
            None => Err(GrammarError::Syntax {
                offset: start,
                expected: "value",
            }),
        }
    }

    fn call(mut self) -> Result<CanonicalAction, GrammarError> {
        let name = self.ident("function name")?;
        let kind = ActionKind::from_name(name)
            .ok_or_else(|| GrammarError::UnknownFunction(name.to_string()))?;
        self.expect('(', "`(`")?;
        let mut params: Vec<(&str, String)> = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
        } else {
            loop {
                let key = self.ident("parameter name")?;
                self.expect('=', "`=`")?;
                let value = self.value()?;
                if params.iter().any(|(k, _)| k.eq_ignore_ascii_case(key)) {
                    return Err(GrammarError::DuplicateParameter(key.to_string()));
                }
                params.push((key, value));
                self.skip_ws();
                match self.bump() {
                    Some(',') => continue,
                    Some(')') => break,
                    _ => {
                        return Err(GrammarError::Syntax {
                            offset: self.pos,
                            expected: "`,` or `)`",
                        })
                    }
                }
            }
        }
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(GrammarError::Syntax {
                offset: self.pos,
                expected: "end of input",
            });
        }
        CanonicalAction::new(kind, params)
    }
}
