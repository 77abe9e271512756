//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AnnotatorClient, ClientError, ClientIdentity, Reply};

pub const API_KEY_ENV: &str = "ACTIONGRAPH_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_JUDGE_MODEL: &str = "o4-mini-2025-04-16";
pub const DEFAULT_CONVERTER_MODEL: &str = "gpt-4o-2024-08-06";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub temperature: Option<f64>,
    pub timeout_secs: u64,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: DEFAULT_ENDPOINT.into(),
            model: DEFAULT_JUDGE_MODEL.into(),
            temperature: Some(0.1),
            timeout_secs: 120,
            api_key_env: API_KEY_ENV.into(),
        }
    }
}

impl LiveConfig {
    pub fn judge() -> Self {
        Self::default()
    }

    pub fn converter() -> Self {
        LiveConfig {
            model: DEFAULT_CONVERTER_MODEL.into(),
            temperature: None,
            ..Self::default()
        }
    }
}

pub struct LiveClient {
    config: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: LiveConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            ClientError::Fatal(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: LiveConfig, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LiveClient {
            config,
            api_key: api_key.into(),
            agent,
        }
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    fn body(&self, system: &str, user: &str) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// Mean token probability of the first line, when log-probabilities are
/// returned.
fn first_line_confidence(choice: &Value) -> Option<f64> {
    let tokens = choice.pointer("/logprobs/content")?.as_array()?;
    let mut probs = Vec::new();
    for t in tokens {
        let text = t.get("token")?.as_str()?;
        if text.contains('\n') {
            break;
        }
        probs.push(t.get("logprob")?.as_f64()?.exp());
    }
    (!probs.is_empty()).then(|| probs.iter().sum::<f64>() / probs.len() as f64)
}

impl AnnotatorClient for LiveClient {
    fn complete(&self, system: &str, user: &str) -> Result<Reply, ClientError> {
        let response = self
            .agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(system, user))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ClientError::Transport(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(ClientError::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("malformed response: {e}")))?;
        let choice = v
            .pointer("/choices/0")
            .ok_or_else(|| ClientError::Transport("response has no choices".into()))?;
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ClientError::Transport("response has no message content".into()))?;
        Ok(Reply {
            text: content.to_string(),
            confidence: first_line_confidence(choice),
        })
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity {
            backend: "live".into(),
            endpoint: Some(self.config.endpoint.clone()),
            model: self.config.model.clone(),
            temperature: self.config.temperature,
        }
    }
}
