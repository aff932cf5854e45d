//! User-level train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::CorpusManifest;

pub const DEFAULT_SPLIT_RATIO: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: CorpusManifest,
    pub validation: CorpusManifest,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("split ratio {0} must lie strictly between 0 and 1")]
pub struct InvalidRatio(pub f64);

/// Validation gets `floor(n * (1 - ratio))` users, the rest train. Users are
/// shuffled with a seeded ChaCha8 stream first, then each side keeps the
/// manifest's original order.
pub fn split_corpus(
    manifest: &CorpusManifest,
    ratio: f64,
    seed: u64,
) -> Result<CorpusSplit, InvalidRatio> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(InvalidRatio(ratio));
    }
    let n = manifest.users.len();
    // The epsilon keeps 10 * 0.1 from flooring to 0 under binary rounding.
    let n_val = ((n as f64) * (1.0 - ratio) + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    val_idx.sort_unstable();

    let pick = |keep_val: bool| CorpusManifest {
        users: (0..n)
            .filter(|i| val_idx.binary_search(i).is_ok() == keep_val)
            .map(|i| manifest.users[i].clone())
            .collect(),
        ..manifest.clone()
    };
    let mut warnings = Vec::new();
    if n_val == 0 && n > 0 {
        warnings.push(format!("validation split is empty for {n} user(s) at ratio {ratio}"));
    }
    Ok(CorpusSplit { train: pick(false), validation: pick(true), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> CorpusManifest {
        CorpusManifest {
            users: (0..n).map(|i| format!("u{i}.json")).collect(),
            ..CorpusManifest::default()
        }
    }

    #[test]
    fn nine_to_one() {
        let s = split_corpus(&manifest(10), DEFAULT_SPLIT_RATIO, 7).unwrap();
        assert_eq!((s.train.users.len(), s.validation.users.len()), (9, 1));
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn single_user_warns() {
        let s = split_corpus(&manifest(1), 0.9, 0).unwrap();
        assert_eq!((s.train.users.len(), s.validation.users.len()), (1, 0));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn seeded_and_disjoint() {
        let m = manifest(20);
        let a = split_corpus(&m, 0.7, 42).unwrap();
        assert_eq!(a, split_corpus(&m, 0.7, 42).unwrap());
        assert_eq!(a.validation.users.len(), 6);
        for u in &a.validation.users {
            assert!(!a.train.users.contains(u));
        }
    }

    #[test]
    fn rejects_bad_ratio() {
        assert!(split_corpus(&manifest(3), 1.0, 0).is_err());
        assert!(split_corpus(&manifest(3), 0.0, 0).is_err());
    }
}
