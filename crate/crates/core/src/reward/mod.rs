//! State-transition reward: relative complements, thresholded semantic
//! alignment, keyword fidelity, soft precision/recall/F1, plus the binary
//! format and retrieval rewards and their weighted sum.

mod delta;
mod matching;
mod scoring;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delta::{compute_delta, DeltaSets, Origin, Provenance, ProvenanceInfo, ResidualEntry};
pub use matching::{
    matching_weight, optimal_matching, similarity_matrix, AlignedPair, SimilarityMatrix,
    WEIGHT_TOLERANCE,
};
pub use scoring::{
    combined_reward, filter_update_hacks, levenshtein_distances, lexical_fidelity, soft_scores,
    RewardWeights, SoftScores, EPSILON,
};

use crate::agent::transcript::{parse_transcript, ProposedOp, Trajectory};
use crate::memory::MemoryState;
use crate::retrieval::Embedder;
use crate::synth::schema::{OpKind, OracleOp};
use crate::text::normalize_text;

/// Similarity threshold used unless configured otherwise.
pub const DEFAULT_TAU: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("non-finite similarity value {0}")]
    NonFiniteSimilarity(f64),
    #[error("tau {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("reward weights must be non-negative and sum to 1 (got {0})")]
    WeightSumInvalid(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub tau: f64,
    pub use_fidelity: bool,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, use_fidelity: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred_index: usize,
    pub target_index: usize,
    pub pred_content: String,
    pub target_content: String,
    pub phi: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    pub pairs: Vec<MatchedPair>,
    pub total_fidelity: f64,
}

/// Everything computed on the way to `r_trans`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionScore {
    pub r_trans: f64,
    pub p_soft: f64,
    pub r_soft: f64,
    pub dist_plus: f64,
    pub dist_minus: f64,
    pub n_pred: usize,
    pub n_target: usize,
    pub delta: DeltaSets,
    pub phi: Vec<Vec<f64>>,
    pub matching: MatchingResult,
    /// Pairs removed by the update-hack filter.
    pub dropped_pairs: Vec<MatchedPair>,
}

fn matched(pair: &AlignedPair, delta: &DeltaSets, fidelity: f64) -> MatchedPair {
    MatchedPair {
        pred_index: pair.pred,
        target_index: pair.target,
        pred_content: delta.pred_residual[pair.pred].content.clone(),
        target_content: delta.target_residual[pair.target].content.clone(),
        phi: pair.phi,
        fidelity,
    }
}

/// Soft-F1 transition reward of `pred` against `target`.
pub fn trans_reward(
    pred: &MemoryState,
    target: &MemoryState,
    pred_provenance: &Provenance,
    target_provenance: &Provenance,
    embedder: &dyn Embedder,
    cfg: TransitionConfig,
) -> Result<TransitionScore, RewardError> {
    let delta = compute_delta(pred, target, pred_provenance, target_provenance);
    let phi = similarity_matrix(&delta, embedder);
    let aligned = optimal_matching(&phi, cfg.tau)?;
    let kept = filter_update_hacks(&aligned, &delta);

    let kept_keys: HashSet<(usize, usize)> = kept.iter().map(|p| (p.pred, p.target)).collect();
    let dropped_pairs = aligned
        .iter()
        .filter(|p| !kept_keys.contains(&(p.pred, p.target)))
        .map(|p| matched(p, &delta, 0.0))
        .collect();

    let pairs: Vec<MatchedPair> = kept
        .iter()
        .map(|p| {
            let fidelity = if cfg.use_fidelity {
                let keywords = delta.target_residual[p.target]
                    .keywords
                    .as_deref()
                    .unwrap_or_default();
                lexical_fidelity(&delta.pred_residual[p.pred].content, keywords).unwrap_or(p.phi)
            } else {
                p.phi
            };
            matched(p, &delta, fidelity)
        })
        .collect();
    let total_fidelity: f64 = pairs.iter().map(|p| p.fidelity).sum();

    let n_pred = delta.pred_residual.len();
    let n_target = delta.target_residual.len();
    let (dist_plus, dist_minus) = levenshtein_distances(total_fidelity, n_pred, n_target);
    let soft = soft_scores(total_fidelity, n_pred, n_target);

    Ok(TransitionScore {
        r_trans: soft.f1,
        p_soft: soft.precision,
        r_soft: soft.recall,
        dist_plus,
        dist_minus,
        n_pred,
        n_target,
        phi: phi.to_rows(),
        delta,
        matching: MatchingResult { pairs, total_fidelity },
        dropped_pairs,
    })
}

/// 1 when the transcript parses under the ReAct grammar, else 0.
pub fn format_reward(raw_transcript: &str) -> f64 {
    if parse_transcript(raw_transcript).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// 1 when every updated id was surfaced by some tool response.
pub fn retrieval_reward(trajectory: &Trajectory, emitted: &[ProposedOp]) -> f64 {
    let seen: HashSet<&str> = trajectory.retrieved_ids().collect();
    let ok = emitted.iter().all(|op| match op {
        ProposedOp::Update { id, .. } => seen.contains(id.as_str()),
        _ => true,
    });
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Provenance of agent-written contents, keyed by normalized text.
pub fn provenance_from_ops(ops: &[ProposedOp]) -> Provenance {
    let mut out = Provenance::new();
    for op in ops {
        let (content, info) = match op {
            ProposedOp::Add { content } => (
                content,
                ProvenanceInfo { origin: Origin::Add, target_id: None, keywords: vec![] },
            ),
            ProposedOp::Update { id, content } => (
                content,
                ProvenanceInfo {
                    origin: Origin::Update,
                    target_id: Some(id.clone()),
                    keywords: vec![],
                },
            ),
            ProposedOp::None { .. } => continue,
        };
        out.insert(normalize_text(content), info);
    }
    out
}

/// Oracle operation kinds and keyword sets, keyed by normalized text.
pub fn provenance_from_oracle(ops: &[OracleOp]) -> Provenance {
    let mut out = Provenance::new();
    for op in ops {
        let origin = match op.kind {
            OpKind::Add => Origin::Add,
            OpKind::Update => Origin::Update,
            OpKind::None => continue,
        };
        out.insert(
            normalize_text(&op.content),
            ProvenanceInfo { origin, target_id: None, keywords: op.keywords.clone() },
        );
    }
    out
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_true() -> bool {
    true
}

/// Wire request for scoring one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRequest {
    pub pred_state: MemoryState,
    pub target_state: MemoryState,
    #[serde(default)]
    pub oracle_ops: Vec<OracleOp>,
    pub transcript: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_true")]
    pub use_fidelity: bool,
    #[serde(default)]
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_retrieval: f64,
    pub r_trans: f64,
    pub r_total: f64,
    pub p_soft: f64,
    pub r_soft: f64,
    pub dist_plus: f64,
    pub dist_minus: f64,
    pub n_pred: usize,
    pub n_target: usize,
    pub tau: f64,
    pub use_fidelity: bool,
    pub weights: RewardWeights,
    pub phi: Vec<Vec<f64>>,
    pub matching: MatchingResult,
    pub dropped_pairs: Vec<MatchedPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
}

/// Scores a request end to end. An unparsable transcript yields
/// `r_format = 0` and `r_retrieval = 0` and contributes no provenance.
pub fn score_request(
    request: &RewardRequest,
    embedder: &dyn Embedder,
) -> Result<RewardBreakdown, RewardError> {
    request.weights.validate()?;
    let parsed = parse_transcript(&request.transcript);
    let (r_format, r_retrieval, pred_provenance, format_error) = match &parsed {
        Ok(trajectory) => {
            let ops = trajectory.final_ops.as_deref().unwrap_or_default();
            (1.0, retrieval_reward(trajectory, ops), provenance_from_ops(ops), None)
        }
        Err(e) => (0.0, 0.0, Provenance::new(), Some(e.to_string())),
    };
    let transition = trans_reward(
        &request.pred_state,
        &request.target_state,
        &pred_provenance,
        &provenance_from_oracle(&request.oracle_ops),
        embedder,
        TransitionConfig { tau: request.tau, use_fidelity: request.use_fidelity },
    )?;
    let r_total = combined_reward(&request.weights, r_format, r_retrieval, transition.r_trans)?;
    Ok(RewardBreakdown {
        r_format,
        r_retrieval,
        r_trans: transition.r_trans,
        r_total,
        p_soft: transition.p_soft,
        r_soft: transition.r_soft,
        dist_plus: transition.dist_plus,
        dist_minus: transition.dist_minus,
        n_pred: transition.n_pred,
        n_target: transition.n_target,
        tau: request.tau,
        use_fidelity: request.use_fidelity,
        weights: request.weights,
        phi: transition.phi,
        matching: transition.matching,
        dropped_pairs: transition.dropped_pairs,
        format_error,
    })
}
