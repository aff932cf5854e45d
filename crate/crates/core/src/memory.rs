//! Memory bank representation and the state transition function.
//!
//! A [`MemoryState`] is a finite map `id -> (content, timestamp)`. States are
//! values: applying operations returns a new state and leaves the input
//! untouched, so rollouts can branch from a shared snapshot.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fingerprint of the empty state: the FNV-1a 64-bit offset basis.
pub const EMPTY_FINGERPRINT: u64 = 0xcbf2_9ce4_8422_2325;

const FIELD_SEP: u8 = 0x1f;
const RECORD_SEP: u8 = 0x1e;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("update target `{0}` does not exist")]
    UpdateTargetMissing(String),
    #[error("memory content is empty")]
    EmptyContent,
    #[error("duplicate memory id `{0}`")]
    DuplicateId(String),
    #[error("operation {index} failed: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<MemoryError>,
    },
    #[error("invalid state file: {0}")]
    Format(String),
}

impl MemoryError {
    /// Strips the positional wrapper added by [`apply_operations`].
    pub fn root(&self) -> &MemoryError {
        match self {
            MemoryError::AtIndex { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    pub content: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredMemory {
    pub content: String,
    pub timestamp: i64,
}

/// Snapshot of the memory bank. Keys are entry ids, iteration is by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryState {
    entries: BTreeMap<String, StoredMemory>,
}

/// A memory operation emitted by the agent or derived from an oracle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MemoryOperation {
    Add {
        content: String,
        timestamp: i64,
    },
    Update {
        target_id: String,
        new_content: String,
        timestamp: i64,
    },
    #[serde(rename = "none")]
    NoneOp { content: String },
}

impl MemoryOperation {
    pub fn is_add(&self) -> bool {
        matches!(self, MemoryOperation::Add { .. })
    }

    pub fn is_update(&self) -> bool {
        matches!(self, MemoryOperation::Update { .. })
    }
}

/// Source of fresh entry ids.
pub trait IdSource {
    fn next_id(&mut self) -> String;
}

/// Mints `m000001`, `m000002`, ... in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequentialIds {
    next: u64,
}

impl SequentialIds {
    pub fn new() -> Self {
        Self { next: 1 }
    }

    /// Continues numbering after the largest `mNNNNNN` id already present in
    /// `state`, so pre-assigned ids from an initial state are never reused.
    pub fn after(state: &MemoryState) -> Self {
        let max = state
            .ids()
            .filter_map(|id| id.strip_prefix('m'))
            .filter_map(|digits| digits.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Self { next: max + 1 }
    }
}

impl Default for SequentialIds {
    fn default() -> Self {
        Self::new()
    }
}

impl IdSource for SequentialIds {
    fn next_id(&mut self) -> String {
        let id = format!("m{:06}", self.next);
        self.next += 1;
        id
    }
}

fn ensure_content(content: &str) -> Result<(), MemoryError> {
    if content.trim().is_empty() {
        Err(MemoryError::EmptyContent)
    } else {
        Ok(())
    }
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state from entries, rejecting duplicate ids and blank content.
    pub fn from_entries<I>(entries: I) -> Result<Self, MemoryError>
    where
        I: IntoIterator<Item = MemoryEntry>,
    {
        let mut map = BTreeMap::new();
        for entry in entries {
            ensure_content(&entry.content)?;
            if map.contains_key(&entry.id) {
                return Err(MemoryError::DuplicateId(entry.id));
            }
            map.insert(
                entry.id,
                StoredMemory {
                    content: entry.content,
                    timestamp: entry.timestamp,
                },
            );
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StoredMemory> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> impl Iterator<Item = MemoryEntry> + '_ {
        self.entries.iter().map(|(id, m)| MemoryEntry {
            id: id.clone(),
            content: m.content.clone(),
            timestamp: m.timestamp,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredMemory)> {
        self.entries.iter().map(|(id, m)| (id.as_str(), m))
    }

    /// Canonical state file body, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("state serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        serde_json::from_str(text).map_err(|e| MemoryError::Format(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    entries: Vec<MemoryEntry>,
}

impl Serialize for MemoryState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        StateFile {
            entries: self.entries().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MemoryState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = StateFile::deserialize(deserializer)?;
        MemoryState::from_entries(file.entries).map_err(serde::de::Error::custom)
    }
}

pub fn new_state() -> MemoryState {
    MemoryState::new()
}

/// The transition function for a single operation.
pub fn apply_operation(
    state: &MemoryState,
    op: &MemoryOperation,
    ids: &mut dyn IdSource,
) -> Result<MemoryState, MemoryError> {
    let mut next = state.clone();
    apply_in_place(&mut next, op, ids)?;
    Ok(next)
}

fn apply_in_place(
    state: &mut MemoryState,
    op: &MemoryOperation,
    ids: &mut dyn IdSource,
) -> Result<(), MemoryError> {
    match op {
        MemoryOperation::Add { content, timestamp } => {
            ensure_content(content)?;
            let mut id = ids.next_id();
            while state.entries.contains_key(&id) {
                id = ids.next_id();
            }
            state.entries.insert(
                id,
                StoredMemory {
                    content: content.clone(),
                    timestamp: *timestamp,
                },
            );
        }
        MemoryOperation::Update {
            target_id,
            new_content,
            timestamp,
        } => {
            ensure_content(new_content)?;
            let slot = state
                .entries
                .get_mut(target_id)
                .ok_or_else(|| MemoryError::UpdateTargetMissing(target_id.clone()))?;
            slot.content = new_content.clone();
            slot.timestamp = *timestamp;
        }
        MemoryOperation::NoneOp { .. } => {}
    }
    Ok(())
}

/// Left fold of [`apply_operation`]. On failure the caller's state is
/// untouched and the error carries the index of the offending operation.
pub fn apply_operations(
    state: &MemoryState,
    ops: &[MemoryOperation],
    ids: &mut dyn IdSource,
) -> Result<MemoryState, MemoryError> {
    let mut next = state.clone();
    for (index, op) in ops.iter().enumerate() {
        apply_in_place(&mut next, op, ids).map_err(|source| MemoryError::AtIndex {
            index,
            source: Box::new(source),
        })?;
    }
    Ok(next)
}

/// FNV-1a 64 over the entries in id order, each encoded as
/// `id 0x1F content 0x1F timestamp-decimal 0x1E`. The empty state hashes to
/// [`EMPTY_FINGERPRINT`].
pub fn state_fingerprint(state: &MemoryState) -> u64 {
    let mut hasher = FnvHasher::default();
    for (id, memory) in state.iter() {
        hasher.write(id.as_bytes());
        hasher.write(&[FIELD_SEP]);
        hasher.write(memory.content.as_bytes());
        hasher.write(&[FIELD_SEP]);
        hasher.write(memory.timestamp.to_string().as_bytes());
        hasher.write(&[RECORD_SEP]);
    }
    hasher.finish()
}

pub fn fingerprint_hex(fingerprint: u64) -> String {
    format!("{fingerprint:016x}")
}
