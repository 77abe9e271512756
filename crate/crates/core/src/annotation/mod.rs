//! Prompt rendering, reply parsing and the annotator clients used to judge
//! trajectories and convert free-text actions into calls.

pub mod convert;
pub mod judge;
#[cfg(feature = "live-client")]
pub mod live;
pub mod mock;
pub mod prompts;
pub mod reply;
pub mod template;

use std::fmt;
use std::thread;
use std::time::Duration;

pub use convert::{canonicalize, ConversionReport, IngestError, LowTrust};
pub use judge::{judge, JudgeFailure, JudgeOptions, JudgeReport};
pub use mock::{MockConverterClient, MockJudgeClient};
pub use prompts::{render_conversion_prompt, render_judge_prompt, Prompt};
pub use reply::{
    parse_conversion_reply, parse_judge_reply, ConversionRecord, JudgeVerdict, ReplyError,
};

/// Raw model output plus an optional confidence side channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub confidence: Option<f64>,
}

impl Reply {
    pub fn text(text: impl Into<String>) -> Self {
        Reply {
            text: text.into(),
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// Worth retrying: timeouts, refused connections, 429 and 5xx.
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Fatal(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport(_))
    }

    pub fn code(&self) -> &'static str {
        match self {
            ClientError::Transport(_) => "TRANSPORT",
            ClientError::Fatal(_) => "CLIENT_FATAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientIdentity {
    pub backend: String,
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: Option<f64>,
}

impl fmt::Display for ClientIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.backend, self.model)?;
        if let Some(t) = self.temperature {
            write!(f, " (temperature {t})")?;
        }
        Ok(())
    }
}

/// A chat-style completion backend. Mock backends are pure functions of
/// `(system, user)`.
pub trait AnnotatorClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<Reply, ClientError>;
    fn identity(&self) -> ClientIdentity;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// Why a prompt could not be turned into a usable reply.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CallError {
    #[error("{0}")]
    Client(ClientError),
    #[error("{0}")]
    Reply(ReplyError),
}

impl CallError {
    pub fn code(&self) -> &'static str {
        match self {
            CallError::Client(e) => e.code(),
            CallError::Reply(e) => e.code,
        }
    }
}

/// Sends `prompt` until `parse` accepts a reply. Transport and parse errors
/// are retried; fatal client errors are not. Returns the attempt count too.
pub fn call_with_retry<T>(
    client: &dyn AnnotatorClient,
    prompt: &Prompt,
    policy: &RetryPolicy,
    parse: impl Fn(&Reply) -> Result<T, ReplyError>,
) -> Result<(T, u32), (CallError, u32)> {
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_delay;
    let mut last = None;
    for attempt in 1..=attempts {
        let err = match client.complete(&prompt.system, &prompt.user) {
            Ok(reply) => match parse(&reply) {
                Ok(v) => return Ok((v, attempt)),
                Err(e) => CallError::Reply(e),
            },
            Err(e) if !e.is_retryable() => return Err((CallError::Client(e), attempt)),
            Err(e) => CallError::Client(e),
        };
        last = Some(err);
        if attempt < attempts && !delay.is_zero() {
            thread::sleep(delay);
            delay = delay.saturating_mul(2);
        }
    }
    Err((last.expect("at least one attempt"), attempts))
}
