//! Relative complements of a predicted and a target state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::memory::MemoryState;
use crate::text::normalize_text;

/// Which operation produced a residual entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Add,
    Update,
    Preexisting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceInfo {
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

/// Normalized content -> where it came from.
pub type Provenance = HashMap<String, ProvenanceInfo>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub content: String,
    pub origin_op: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_target_id: Option<String>,
    /// Present on the target side only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSets {
    pub pred_residual: Vec<ResidualEntry>,
    pub target_residual: Vec<ResidualEntry>,
}

impl DeltaSets {
    pub fn is_empty(&self) -> bool {
        self.pred_residual.is_empty() && self.target_residual.is_empty()
    }
}

/// Multiset difference under normalized-content equality. Ids and
/// timestamps are ignored; residuals keep state (id) order and original text.
pub fn compute_delta(
    pred: &MemoryState,
    target: &MemoryState,
    pred_provenance: &Provenance,
    target_provenance: &Provenance,
) -> DeltaSets {
    let pred_norm: Vec<(String, &str)> = pred
        .iter()
        .map(|(_, m)| (normalize_text(&m.content), m.content.as_str()))
        .collect();
    let target_norm: Vec<(String, &str)> = target
        .iter()
        .map(|(_, m)| (normalize_text(&m.content), m.content.as_str()))
        .collect();

    let mut pred_counts: HashMap<&str, usize> = HashMap::new();
    for (norm, _) in &pred_norm {
        *pred_counts.entry(norm).or_default() += 1;
    }
    let mut target_counts: HashMap<&str, usize> = HashMap::new();
    for (norm, _) in &target_norm {
        *target_counts.entry(norm).or_default() += 1;
    }

    // Number of pairwise-cancelled copies per normalized sentence.
    let shared: HashMap<&str, usize> = pred_counts
        .iter()
        .filter_map(|(k, p)| target_counts.get(k).map(|t| (*k, (*p).min(*t))))
        .collect();

    let residual = |items: &[(String, &str)], keep_keywords: bool, provenance: &Provenance| {
        let mut cancelled: HashMap<&str, usize> = HashMap::new();
        let mut out = Vec::new();
        for (norm, original) in items {
            let limit = shared.get(norm.as_str()).copied().unwrap_or(0);
            let used = cancelled.entry(norm.as_str()).or_default();
            if *used < limit {
                *used += 1;
                continue;
            }
            let info = provenance.get(norm);
            out.push(ResidualEntry {
                content: (*original).to_owned(),
                origin_op: info.map_or(Origin::Preexisting, |i| i.origin),
                origin_target_id: info.and_then(|i| i.target_id.clone()),
                keywords: keep_keywords
                    .then(|| info.map(|i| i.keywords.clone()).unwrap_or_default()),
            });
        }
        out
    };

    DeltaSets {
        pred_residual: residual(&pred_norm, false, pred_provenance),
        target_residual: residual(&target_norm, true, target_provenance),
    }
}
