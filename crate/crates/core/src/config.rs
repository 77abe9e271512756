//! Run configuration, read from TOML and overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisConfig, ClassifierConfig, RewardConfig};
use crate::graph::{BuildOptions, EdgeCounting, DEFAULT_THETA};
use crate::metrics::BucketConfig;
use crate::parallel::Parallelism;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Live,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Mock => "mock",
            Backend::Live => "live",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub backend: Backend,
    pub endpoint: String,
    pub judge_model: String,
    pub converter_model: String,
    pub temperature: Option<f64>,
    pub timeout_secs: u64,
    /// Concurrent requests; 0 follows `jobs`.
    pub max_in_flight: usize,
    pub retries: u32,
    pub retry_base_ms: u64,
    pub api_key_env: String,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            backend: Backend::Mock,
            endpoint: "https://api.openai.com/v1".into(),
            judge_model: "o4-mini-2025-04-16".into(),
            converter_model: "gpt-4o-2024-08-06".into(),
            temperature: Some(0.1),
            timeout_secs: 120,
            max_in_flight: 0,
            retries: 3,
            retry_base_ms: 500,
            api_key_env: "ACTIONGRAPH_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub theta: f64,
    /// Worker cap; 0 uses every core, 1 runs sequentially.
    pub jobs: usize,
    pub edge_counting: EdgeCounting,
    pub rewards: RewardConfig,
    pub classifier: ClassifierConfig,
    pub buckets: BucketConfig,
    pub client: ClientConfig,
    pub synth: SynthConfig,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            theta: DEFAULT_THETA,
            jobs: 0,
            edge_counting: EdgeCounting::default(),
            rewards: RewardConfig::default(),
            classifier: ClassifierConfig::default(),
            buckets: BucketConfig::default(),
            client: ClientConfig::default(),
            synth: SynthConfig::default(),
            output: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "IO",
            ConfigError::Parse { .. } | ConfigError::Invalid(_) => "INVALID_CONFIG",
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            source: Box::new(e),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(invalid(format!("theta {} outside (0, 1]", self.theta)));
        }
        self.rewards
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.classifier
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.buckets
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.synth.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(t) = self.client.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(invalid(format!("client temperature {t} outside [0, 2]")));
            }
        }
        if self.client.retries == 0 {
            return Err(invalid("client retries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            theta: self.theta,
            counting: self.edge_counting,
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            reward: self.rewards,
            classifier: self.classifier,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism::from_jobs(self.jobs)
    }

    pub fn client_parallelism(&self) -> Parallelism {
        match self.client.max_in_flight {
            0 => self.parallelism(),
            n => Parallelism::from_jobs(n),
        }
    }

    /// Every analysis constant, as printed in reports.
    pub fn parameters(&self) -> Vec<(String, String)> {
        let c = &self.classifier;
        let lengths: Vec<String> = self
            .buckets
            .length_edges
            .iter()
            .map(|e| e.to_string())
            .collect();
        let cuts = match self.buckets.complexity_cuts {
            Some([a, b, c]) => format!("{a}, {b}, {c}"),
            None => "dataset quartiles".into(),
        };
        vec![
            ("theta".into(), self.theta.to_string()),
            (
                "edge counting".into(),
                match self.edge_counting {
                    EdgeCounting::PerOccurrence => "per-occurrence".into(),
                    EdgeCounting::PerTrajectory => "per-trajectory".into(),
                },
            ),
            ("gamma".into(), self.rewards.gamma.to_string()),
            (
                "reward tolerance".into(),
                format!("{:e}", self.rewards.tolerance),
            ),
            (
                "reward max iterations".into(),
                self.rewards.max_iterations.to_string(),
            ),
            ("w_high".into(), c.w_high.to_string()),
            ("w_low".into(), c.w_low.to_string()),
            ("s_fail".into(), c.s_fail.to_string()),
            ("s_success".into(), c.s_success.to_string()),
            ("length bucket edges".into(), lengths.join(", ")),
            ("complexity cuts".into(), cuts),
        ]
    }
}
