//! Request and response bodies of the HTTP service, shared by the server
//! and its client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::transcript::Trajectory;
use crate::grpo::{RolloutGroup, DEFAULT_CLIP};
use crate::memory::{MemoryOperation, MemoryState};
use crate::pipeline::{IngestMetrics, RunSettings, ScriptFile};
use crate::retrieval::{SearchHit, DEFAULT_TOP_K};
use crate::reward::RewardBreakdown;
use crate::synth::{CorpusManifest, CorpusSplit, SynthesisConfig, UserBundle, ValidationReport};

/// Error body for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

/// Per-item outcome of a batch call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchItem<T> {
    Ok(T),
    Error(ApiError),
}

pub type RewardBatchItem = BatchItem<RewardBreakdown>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvantagesRequest {
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantagesResponse {
    pub advantages: Vec<f64>,
}

fn default_clip() -> f64 {
    DEFAULT_CLIP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveRequest {
    pub group: RolloutGroup,
    #[serde(default = "default_clip")]
    pub eps_clip: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResponse {
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseRequest {
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub trajectory: Trajectory,
}

/// A corpus sent inline: users in order plus the validation limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusBody {
    #[serde(default)]
    pub config: SynthesisConfig,
    pub users: Vec<UserBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: String,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub ok: bool,
    pub errors: usize,
    pub warnings: usize,
    pub users: Vec<UserReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFingerprints {
    pub user_id: String,
    /// Hex fingerprints of `S_1 .. S_n`.
    pub fingerprints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub ok: bool,
    pub users: Vec<UserFingerprints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRequest {
    pub manifest: CorpusManifest,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    crate::synth::DEFAULT_SPLIT_RATIO
}

pub type SplitResponse = CorpusSplit;

/// Agent backends the service can run without outside access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientSpec {
    /// Replays each session's oracle operations.
    Oracle,
    Scripted { script: ScriptFile },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub users: Vec<UserBundle>,
    pub client: ClientSpec,
    #[serde(default)]
    pub settings: RunSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub metrics: IngestMetrics,
    pub final_states: BTreeMap<String, MemoryState>,
    pub transcripts: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBankRequest {
    #[serde(default)]
    pub initial_state: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankResponse {
    pub bank_id: String,
    pub state: MemoryState,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplyRequest {
    pub operations: Vec<MemoryOperation>,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}
