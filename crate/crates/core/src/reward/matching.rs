//! Similarity matrix and thresholded maximum-weight one-to-one matching.

use serde::{Deserialize, Serialize};

use super::delta::DeltaSets;
use super::RewardError;
use crate::retrieval::{cosine, Embedder};

/// Two optima whose weights differ by less than this are treated as tied.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Dense row-major `rows x cols` matrix of pairwise similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix shape mismatch");
        Self { rows, cols, values }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, cols: usize) -> Self {
        let n = rows.len();
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(n, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.values[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }
}

/// `phi[i][j] = cosine(pred_i, target_j)` with negatives clamped to zero.
pub fn similarity_matrix(delta: &DeltaSets, embedder: &dyn Embedder) -> SimilarityMatrix {
    let preds: Vec<_> = delta
        .pred_residual
        .iter()
        .map(|e| embedder.embed(&e.content))
        .collect();
    let targets: Vec<_> = delta
        .target_residual
        .iter()
        .map(|e| embedder.embed(&e.content))
        .collect();
    let mut values = Vec::with_capacity(preds.len() * targets.len());
    for p in &preds {
        for t in &targets {
            values.push(cosine(p, t).unwrap_or(0.0).clamp(0.0, 1.0));
        }
    }
    SimilarityMatrix::new(preds.len(), targets.len(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub pred: usize,
    pub target: usize,
    pub phi: f64,
}

/// Globally optimal one-to-one matching over pairs with `phi >= tau`.
///
/// Among optima within [`WEIGHT_TOLERANCE`] of the best weight, the result
/// is the lexicographically smallest pair list, sorted by `(pred, target)`.
pub fn optimal_matching(phi: &SimilarityMatrix, tau: f64) -> Result<Vec<AlignedPair>, RewardError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(RewardError::InvalidTau(tau));
    }
    if let Some(bad) = phi.values.iter().find(|v| !v.is_finite()) {
        return Err(RewardError::NonFiniteSimilarity(*bad));
    }
    let admissible = |i: usize, j: usize| {
        let v = phi.get(i, j);
        (v >= tau).then_some(v)
    };

    let all_rows: Vec<usize> = (0..phi.rows).collect();
    let mut free_cols: Vec<usize> = (0..phi.cols).collect();
    let best = assignment_weight(&all_rows, &free_cols, &admissible);

    let mut pairs = Vec::new();
    let mut fixed = 0.0;
    for i in 0..phi.rows {
        if fixed >= best - WEIGHT_TOLERANCE {
            break;
        }
        let rest_rows = &all_rows[i + 1..];
        let choice = free_cols.iter().position(|&j| {
            admissible(i, j).is_some_and(|w| {
                let others: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
                fixed + w + assignment_weight(rest_rows, &others, &admissible)
                    >= best - WEIGHT_TOLERANCE
            })
        });
        if let Some(pos) = choice {
            let j = free_cols.remove(pos);
            let w = phi.get(i, j);
            fixed += w;
            pairs.push(AlignedPair { pred: i, target: j, phi: w });
        }
    }
    Ok(pairs)
}

/// Sum of `phi` over the pairs in list order.
pub fn matching_weight(pairs: &[AlignedPair]) -> f64 {
    pairs.iter().map(|p| p.phi).sum()
}

/// Best total weight of a matching between the given rows and columns,
/// where `weight` returns `None` for forbidden pairs. Weights are
/// non-negative so leaving a row unmatched costs nothing.
fn assignment_weight<F>(rows: &[usize], cols: &[usize], weight: &F) -> f64
where
    F: Fn(usize, usize) -> Option<f64>,
{
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let n = rows.len().max(cols.len());
    // Square cost matrix for a min-cost perfect assignment; padding and
    // forbidden cells cost 0 (equivalent to staying unmatched).
    let cost = |r: usize, c: usize| -> f64 {
        match (rows.get(r), cols.get(c)) {
            (Some(&i), Some(&j)) => -weight(i, j).unwrap_or(0.0),
            _ => 0.0,
        }
    };
    let assignment = hungarian(n, &cost);
    assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| -cost(r, c))
        .sum()
}

/// Shortest augmenting path Hungarian algorithm, O(n^3). Returns the column
/// assigned to each row of an `n x n` cost matrix minimizing total cost.
fn hungarian<F>(n: usize, cost: &F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost(r0 - 1, col - 1) - u[r0] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of_col[col0] = row_of_col[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        if row_of_col[col] > 0 {
            assignment[row_of_col[col] - 1] = col - 1;
        }
    }
    assignment
}
