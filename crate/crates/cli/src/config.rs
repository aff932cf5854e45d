//! Run configuration: a TOML or JSON file, then command-line overrides.
//!
//! Relative paths inside the file resolve against the file's directory.
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use deltamem_core::agent::SessionConfig;
use deltamem_core::pipeline::RunSettings;
use deltamem_core::reward::{RewardWeights, DEFAULT_TAU};
use deltamem_core::synth::{SynthesisConfig, DEFAULT_SPLIT_RATIO};
use serde::Deserialize;

use crate::CliError;

/// Only one embedder ships; the key exists so configs state it explicitly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    #[default]
    Hashed,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientChoice {
    /// Replays each session's oracle operations.
    #[default]
    Oracle,
    /// Canned replies: for ingest a script file keyed by user id, for synth
    /// a `{"replies": [...]}` file consumed in order.
    Scripted { script: PathBuf },
    /// An OpenAI-compatible chat completions endpoint.
    Endpoint {
        url: String,
        model: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tau: f64,
    pub use_fidelity: bool,
    pub weights: RewardWeights,
    pub top_k: usize,
    pub max_tool_calls: usize,
    pub embedder: EmbedderChoice,
    pub client: ClientChoice,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub split_ratio: f64,
    pub server: Option<String>,
    pub synthesis: SynthesisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            tau: DEFAULT_TAU,
            use_fidelity: true,
            weights: RewardWeights::default(),
            top_k: session.top_k,
            max_tool_calls: session.max_tool_calls,
            embedder: EmbedderChoice::Hashed,
            client: ClientChoice::Oracle,
            seed: 0,
            jobs: None,
            split_ratio: DEFAULT_SPLIT_RATIO,
            server: None,
            synthesis: SynthesisConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` as TOML when it ends in `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        if let ClientChoice::Scripted { script } = &mut cfg.client {
            if script.is_relative() {
                *script = path.parent().unwrap_or(Path::new(".")).join(&*script);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(format!("config: {msg}")));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if let Err(e) = self.weights.validate() {
            return bad(e.to_string());
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        Ok(())
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            tau: self.tau,
            use_fidelity: self.use_fidelity,
            weights: self.weights,
            session: SessionConfig { top_k: self.top_k, max_tool_calls: self.max_tool_calls },
            seed: self.seed,
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
