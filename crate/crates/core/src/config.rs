//! Layered configuration: environment variables over a TOML file over defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use crate::llm::client::{DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use crate::llm::prompt::DEFAULT_K_ICL;
use crate::recommend::ScoringWeights;

pub const ENV_CONFIG: &str = "PILAR_CONFIG";
pub const ENV_LLM_ENDPOINT: &str = "PILAR_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "PILAR_LLM_API_KEY";
pub const ENV_DETECTOR_ENDPOINT: &str = "PILAR_DETECTOR_ENDPOINT";
pub const ENV_DATA_DIR: &str = "PILAR_DATA_DIR";

const REDACTED: &str = "<redacted>";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config value for {key}: must be {constraint}")]
    InvalidConfigValue { key: String, constraint: String },
}

fn invalid(key: &str, constraint: &str) -> ConfigError {
    ConfigError::InvalidConfigValue { key: key.to_string(), constraint: constraint.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: f64,
    pub window: usize,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, window: DEFAULT_WINDOW, endpoint: None, timeout_ms: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// (match, diet, goal, calorie)
    pub weights: [f64; 4],
    pub k: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { weights: ScoringWeights::default().as_array(), k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmProvider {
    /// HTTP when an endpoint is configured, otherwise the offline mock.
    #[default]
    Auto,
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: LlmProvider,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub k_icl: usize,
    pub timeout_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: LlmProvider::Auto,
            endpoint: None,
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            k_icl: DEFAULT_K_ICL,
            timeout_ms: 10_000,
        }
    }
}

impl LlmConfig {
    /// Provider after resolving `auto`.
    pub fn effective_provider(&self) -> LlmProvider {
        match (self.provider, &self.endpoint) {
            (LlmProvider::Auto, Some(_)) => LlmProvider::Http,
            (LlmProvider::Auto, None) => LlmProvider::Mock,
            (p, _) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub max_edits: u32,
    pub count: usize,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self { max_edits: 2, count: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Event log location; `None` keeps state in memory only.
    pub log_path: Option<PathBuf>,
    /// Write a snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".to_string(), log_path: None, snapshot_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory with `vocab.json`, `corpus.json`, `rules.json`,
    /// `icl_examples.json` and `fixtures/`; missing files fall back to the
    /// built-in data.
    pub data_dir: Option<PathBuf>,
    pub detection: DetectionConfig,
    pub scoring: ScoringConfig,
    pub llm: LlmConfig,
    pub counterfactual: CounterfactualConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn from_toml(raw: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(raw).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&raw, &path.display().to_string())
    }

    /// Applies the recognised environment variables from `env`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        let non_empty = |k: &str| env(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = non_empty(ENV_LLM_ENDPOINT) {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = non_empty(ENV_LLM_API_KEY) {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = non_empty(ENV_DETECTOR_ENDPOINT) {
            self.detection.endpoint = Some(v);
        }
        if let Some(v) = non_empty(ENV_DATA_DIR) {
            self.data_dir = Some(PathBuf::from(v));
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.detection.threshold) {
            return Err(invalid("detection.threshold", "in [0, 1]"));
        }
        if self.detection.window == 0 {
            return Err(invalid("detection.window", ">= 1"));
        }
        if self.scoring.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("scoring.weights", "non-negative"));
        }
        if (self.scoring.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("scoring.weights", "summing to 1"));
        }
        if self.scoring.k == 0 {
            return Err(invalid("scoring.k", ">= 1"));
        }
        if !self.llm.temperature.is_finite() || !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(invalid("llm.temperature", "in [0, 2]"));
        }
        if self.llm.max_tokens == 0 {
            return Err(invalid("llm.max_tokens", ">= 1"));
        }
        if self.llm.timeout_ms == 0 {
            return Err(invalid("llm.timeout_ms", ">= 1"));
        }
        if self.llm.provider == LlmProvider::Http && self.llm.endpoint.is_none() {
            return Err(invalid("llm.endpoint", "set when llm.provider = \"http\""));
        }
        if self.llm.model.trim().is_empty() {
            return Err(invalid("llm.model", "non-empty"));
        }
        if self.counterfactual.max_edits == 0 {
            return Err(invalid("counterfactual.max_edits", ">= 1"));
        }
        if self.counterfactual.count == 0 {
            return Err(invalid("counterfactual.count", ">= 1"));
        }
        Ok(())
    }

    pub fn weights(&self) -> ScoringWeights {
        let [a, b, c, d] = self.scoring.weights;
        ScoringWeights::new(a, b, c, d).expect("validated weights")
    }

    /// Copy safe to log.
    pub fn redacted(&self) -> Config {
        let mut c = self.clone();
        if c.llm.api_key.is_some() {
            c.llm.api_key = Some(REDACTED.to_string());
        }
        c
    }
}

/// Defaults, then the file named by `PILAR_CONFIG` (if any), then the
/// environment. Logs the effective configuration with secrets redacted.
pub fn load_config() -> Result<Config, ConfigError> {
    let file = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
    let config = load_from(file.as_deref(), |k| std::env::var(k).ok())?;
    tracing::info!(config = ?config.redacted(), "effective configuration");
    Ok(config)
}

pub fn load_from(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Config, ConfigError> {
    let mut config = match file {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    config.apply_env(env);
    config.validate()?;
    Ok(config)
}
