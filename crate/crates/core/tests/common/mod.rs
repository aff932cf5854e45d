#![allow(dead_code)]

use std::path::PathBuf;

use deltamem_core::memory::{MemoryEntry, MemoryState};
use deltamem_core::reward::SimilarityMatrix;
use deltamem_core::synth::{load_corpus, Corpus};
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn mini_corpus() -> Corpus {
    load_corpus(&fixture("mini_corpus/manifest.json")).expect("mini corpus loads")
}

/// Best total weight over all partial one-to-one matchings restricted to
/// entries `>= tau`, by exhaustive search. Sums are accumulated in row
/// order so the result is bit-comparable with a row-ordered pair list.
pub fn brute_force_weight(phi: &SimilarityMatrix, tau: f64) -> f64 {
    fn go(phi: &SimilarityMatrix, tau: f64, row: usize, used: &mut Vec<bool>, acc: f64) -> f64 {
        if row == phi.rows() {
            return acc;
        }
        let mut best = go(phi, tau, row + 1, used, acc);
        for j in 0..phi.cols() {
            let w = phi.get(row, j);
            if !used[j] && w >= tau {
                used[j] = true;
                best = best.max(go(phi, tau, row + 1, used, acc + w));
                used[j] = false;
            }
        }
        best
    }
    go(phi, tau, 0, &mut vec![false; phi.cols()], 0.0)
}

/// Straight-line FNV-1a 64, written independently of the library's hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn manual_fingerprint(entries: &[(&str, &str, i64)]) -> u64 {
    let mut sorted = entries.to_vec();
    sorted.sort();
    let mut buf = Vec::new();
    for (id, content, ts) in sorted {
        buf.extend_from_slice(id.as_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(content.as_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(ts.to_string().as_bytes());
        buf.push(0x1e);
    }
    fnv1a64(&buf)
}

pub fn state_of(contents: &[String]) -> MemoryState {
    MemoryState::from_entries(contents.iter().enumerate().map(|(i, c)| MemoryEntry {
        id: format!("m{:06}", i + 1),
        content: c.clone(),
        timestamp: 0,
    }))
    .expect("valid state")
}

const VOCAB: [&str; 24] = [
    "user", "likes", "tea", "coffee", "runs", "marathon", "boston", "dog", "cat", "named",
    "pepper", "works", "nurse", "hospital", "lives", "in", "oslo", "paris", "green", "plays",
    "guitar", "spanish", "class", "evening",
];

/// A short sentence over a small shared vocabulary, so fuzzed pairs span the
/// whole similarity range.
pub fn sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=6);
    (0..n).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_contents<R: Rng>(rng: &mut R, max: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| sentence(rng)).collect()
}

/// Random matrix whose entries are multiples of 1/256, so every partial sum
/// is exact in binary floating point and weights compare with `==`.
pub fn dyadic_matrix<R: Rng>(rng: &mut R, max_dim: usize) -> SimilarityMatrix {
    let rows = rng.gen_range(0..=max_dim);
    let cols = rng.gen_range(0..=max_dim);
    let values = (0..rows * cols).map(|_| f64::from(rng.gen_range(0..=256u32)) / 256.0).collect();
    SimilarityMatrix::new(rows, cols, values)
}
