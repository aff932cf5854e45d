//! Embeddings and an exact-scan cosine index over a memory state.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryState;

/// Dimension of the bundled hashed embedder.
pub const DEFAULT_DIMENSION: usize = 256;
/// Top-k used by the agent's search tool.
pub const DEFAULT_TOP_K: usize = 5;
/// Top-k for answering-style evaluation.
pub const ANSWERING_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Text embedder. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, RetrievalError> {
    if u.dimension() != v.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            left: u.dimension(),
            right: v.dimension(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u
        .0
        .iter()
        .zip(&v.0)
        .map(|(a, b)| f64::from(*a) * f64::from(*b))
        .sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Bag-of-words feature hashing embedder.
///
/// Text is lowercased, characters that are neither alphanumeric nor
/// whitespace are removed, and the remainder is split on whitespace. Each
/// token adds 1.0 to bucket `fnv1a64(token) mod dimension`; the result is
/// L2-normalized. Empty text embeds to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .collect();
        cleaned.split_whitespace().map(str::to_owned).collect()
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut hasher = FnvHasher::default();
        hasher.write(token.as_bytes());
        (hasher.finish() % self.dimension as u64) as usize
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut values = vec![0f64; self.dimension];
        for token in Self::tokens(text) {
            values[self.bucket(&token)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding(values.into_iter().map(|v| v as f32).collect())
    }
}

/// Convenience wrapper around the default [`HashedEmbedder`].
pub fn embed_hashed(text: &str) -> Embedding {
    HashedEmbedder::default().embed(text)
}

#[derive(Debug, Clone, PartialEq)]
struct IndexedVector {
    content_hash: u64,
    vector: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
}

/// In-process vector index keyed by memory id.
///
/// Not internally synchronized: share it behind an `RwLock` for the
/// many-readers/one-writer pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    vectors: BTreeMap<String, IndexedVector>,
    embeds: usize,
}

fn content_hash(text: &str) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(text.as_bytes());
    hasher.finish()
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            vectors: BTreeMap::new(),
            embeds: 0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn vector(&self, id: &str) -> Option<&Embedding> {
        self.vectors.get(id).map(|v| &v.vector)
    }

    /// Number of embedder calls made over the lifetime of the index.
    pub fn embed_calls(&self) -> usize {
        self.embeds
    }

    /// Brings the index in line with `state`: drops stale ids and re-embeds
    /// only entries whose content changed.
    pub fn sync(&mut self, state: &MemoryState, embedder: &dyn Embedder) {
        self.vectors.retain(|id, _| state.contains(id));
        for (id, memory) in state.iter() {
            let hash = content_hash(&memory.content);
            match self.vectors.get(id) {
                Some(existing) if existing.content_hash == hash => {}
                _ => {
                    let vector = embedder.embed(&memory.content);
                    self.embeds += 1;
                    self.vectors.insert(
                        id.to_owned(),
                        IndexedVector {
                            content_hash: hash,
                            vector,
                        },
                    );
                }
            }
        }
    }

    /// Top `min(k, len)` ids by descending cosine, ties by ascending id.
    pub fn search(&self, query: &str, k: usize, embedder: &dyn Embedder) -> Vec<SearchHit> {
        let q = embedder.embed(query);
        let mut hits: Vec<SearchHit> = self
            .vectors
            .iter()
            .map(|(id, v)| SearchHit {
                id: id.clone(),
                score: cosine(&q, &v.vector).unwrap_or(0.0),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(k.max(1));
        hits
    }

    pub fn to_snapshot(&self) -> IndexSnapshot {
        IndexSnapshot {
            dimension: self.dimension,
            vectors: self
                .vectors
                .iter()
                .map(|(id, v)| (id.clone(), v.vector.clone()))
                .collect(),
        }
    }

    /// Restores vectors from a snapshot. Content hashes are recovered from
    /// `state`; ids absent from `state` are dropped.
    pub fn from_snapshot(
        snapshot: IndexSnapshot,
        state: &MemoryState,
    ) -> Result<Self, RetrievalError> {
        let mut index = Self::new(snapshot.dimension);
        for (id, vector) in snapshot.vectors {
            if vector.dimension() != snapshot.dimension {
                return Err(RetrievalError::DimensionMismatch {
                    left: snapshot.dimension,
                    right: vector.dimension(),
                });
            }
            if vector.0.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::Snapshot(format!("non-finite value for `{id}`")));
            }
            if let Some(memory) = state.get(&id) {
                index.vectors.insert(
                    id,
                    IndexedVector {
                        content_hash: content_hash(&memory.content),
                        vector,
                    },
                );
            }
        }
        Ok(index)
    }
}

/// On-disk form: `{"dimension":int,"vectors":{id:[floats]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSnapshot {
    pub dimension: usize,
    pub vectors: BTreeMap<String, Embedding>,
}
