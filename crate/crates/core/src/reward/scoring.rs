use serde::{Deserialize, Serialize};

use super::delta::{DeltaSets, Origin};
use super::matching::AlignedPair;
use super::RewardError;
use crate::text::{contains_phrase, tokens};

/// Smoothing constant in every soft ratio.
pub const EPSILON: f64 = 1e-8;

/// Drops pairs where an agent-side update was aligned to a fact the oracle
/// introduced with an add.
pub fn filter_update_hacks(pairs: &[AlignedPair], delta: &DeltaSets) -> Vec<AlignedPair> {
    pairs
        .iter()
        .copied()
        .filter(|p| {
            let pred = delta.pred_residual[p.pred].origin_op;
            let target = delta.target_residual[p.target].origin_op;
            !(pred == Origin::Update && target == Origin::Add)
        })
        .collect()
}

/// Fraction of `keywords` present in `pred_content`, or `None` when there
/// are no keywords. Presence is normalized token-sequence containment.
pub fn lexical_fidelity(pred_content: &str, keywords: &[String]) -> Option<f64> {
    if keywords.is_empty() {
        return None;
    }
    let haystack = tokens(pred_content);
    let hits = keywords
        .iter()
        .filter(|k| contains_phrase(&haystack, &tokens(k)))
        .count();
    Some(hits as f64 / (keywords.len() as f64 + EPSILON))
}

/// `(dist+, dist-)`: residual sizes minus matched fidelity mass.
pub fn levenshtein_distances(total_fidelity: f64, n_pred: usize, n_target: usize) -> (f64, f64) {
    (
        n_pred as f64 - total_fidelity,
        n_target as f64 - total_fidelity,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Soft precision, recall and F1. Two empty residuals score a perfect 1.
pub fn soft_scores(total_fidelity: f64, n_pred: usize, n_target: usize) -> SoftScores {
    if n_pred == 0 && n_target == 0 {
        return SoftScores { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let precision = total_fidelity / (n_pred as f64 + EPSILON);
    let recall = total_fidelity / (n_target as f64 + EPSILON);
    let f1 = 2.0 * precision * recall / (precision + recall + EPSILON);
    SoftScores { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub format: f64,
    pub retrieval: f64,
    pub trans: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { format: 0.1, retrieval: 0.1, trans: 0.8 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let parts = [self.format, self.retrieval, self.trans];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::WeightSumInvalid(sum));
        }
        Ok(())
    }
}

pub fn combined_reward(
    weights: &RewardWeights,
    r_format: f64,
    r_retrieval: f64,
    r_trans: f64,
) -> Result<f64, RewardError> {
    weights.validate()?;
    Ok(weights.format * r_format + weights.retrieval * r_retrieval + weights.trans * r_trans)
}
