//! Group-relative policy optimization math: normalized advantages, the
//! clipped surrogate and a nonnegative KL estimator. No training loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CLIP: f64 = 0.2;
pub const DEFAULT_GROUP_SIZE: usize = 8;

/// Below this population std a group is treated as constant.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("rollout {rollout}: log-prob lengths differ (new {new}, old {old}, ref {reference})")]
    LengthMismatch { rollout: usize, new: usize, old: usize, reference: usize },
    #[error("{rewards} rewards but {rollouts} rollouts")]
    RolloutCountMismatch { rewards: usize, rollouts: usize },
}

/// Per-token log-probabilities of one sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rollout {
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    pub rollouts: Vec<Rollout>,
}

/// `(r_i - mean) / std` with population std; all zeros for a constant group.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Pessimistic surrogate `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn clipped_term(logp_new: f64, logp_old: f64, advantage: f64, eps_clip: f64) -> f64 {
    let rho = (logp_new - logp_old).exp();
    let clipped = rho.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (rho * advantage).min(clipped * advantage)
}

/// `exp(d) - d - 1` with `d = logp_ref - logp_new`; never negative.
pub fn kl_term(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    // exp_m1 keeps the estimator accurate (and nonnegative) for tiny d.
    (d.exp_m1() - d).max(0.0)
}

/// Mean over rollouts of the token-mean of `clipped_term - beta * kl_term`.
/// Empty rollouts contribute 0.
pub fn grpo_objective(group: &RolloutGroup, eps_clip: f64, beta: f64) -> Result<f64, GrpoError> {
    if group.rewards.len() != group.rollouts.len() {
        return Err(GrpoError::RolloutCountMismatch {
            rewards: group.rewards.len(),
            rollouts: group.rollouts.len(),
        });
    }
    let advantages = group_advantages(&group.rewards)?;
    let mut total = 0.0;
    for (i, (rollout, &adv)) in group.rollouts.iter().zip(&advantages).enumerate() {
        let n = rollout.logp_new.len();
        if rollout.logp_old.len() != n || rollout.logp_ref.len() != n {
            return Err(GrpoError::LengthMismatch {
                rollout: i,
                new: n,
                old: rollout.logp_old.len(),
                reference: rollout.logp_ref.len(),
            });
        }
        if n == 0 {
            continue;
        }
        let sum: f64 = (0..n)
            .map(|t| {
                clipped_term(rollout.logp_new[t], rollout.logp_old[t], adv, eps_clip)
                    - beta * kl_term(rollout.logp_new[t], rollout.logp_ref[t])
            })
            .sum();
        total += sum / n as f64;
    }
    Ok(total / group.rollouts.len() as f64)
}
