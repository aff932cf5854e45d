//! Oracle replay: folds each session's oracle operations into the target
//! state sequence.

use thiserror::Error;

use super::schema::{OpKind, OracleOp, SessionRecord};
use crate::memory::{apply_operation, IdSource, MemoryError, MemoryOperation, MemoryState, SequentialIds};
use crate::text::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("session {session}, op {op}: no memory matches prior content `{prior}`")]
    MissingUpdateTarget { session: usize, op: usize, prior: String },
    #[error("session {session}, op {op}: prior content `{prior}` matches {candidates:?}")]
    AmbiguousUpdateTarget {
        session: usize,
        op: usize,
        prior: String,
        candidates: Vec<String>,
    },
    #[error("session {session}, op {op}: {source}")]
    Memory {
        session: usize,
        op: usize,
        #[source]
        source: MemoryError,
    },
}

impl ReplayError {
    pub fn session(&self) -> usize {
        match self {
            ReplayError::MissingUpdateTarget { session, .. }
            | ReplayError::AmbiguousUpdateTarget { session, .. }
            | ReplayError::Memory { session, .. } => *session,
        }
    }

    pub fn op(&self) -> usize {
        match self {
            ReplayError::MissingUpdateTarget { op, .. }
            | ReplayError::AmbiguousUpdateTarget { op, .. }
            | ReplayError::Memory { op, .. } => *op,
        }
    }
}

/// Ids of entries whose normalized content equals `prior`.
pub fn find_by_content(state: &MemoryState, prior: &str) -> Vec<String> {
    let wanted = normalize_text(prior);
    state
        .iter()
        .filter(|(_, m)| normalize_text(&m.content) == wanted)
        .map(|(id, _)| id.to_owned())
        .collect()
}

/// Resolves one oracle op against `state`. `none` ops yield `None`.
pub fn resolve_op(
    state: &MemoryState,
    op: &OracleOp,
    timestamp: i64,
    session: usize,
    index: usize,
) -> Result<Option<MemoryOperation>, ReplayError> {
    match op.kind {
        OpKind::Add => Ok(Some(MemoryOperation::Add { content: op.content.clone(), timestamp })),
        OpKind::None => Ok(None),
        OpKind::Update => {
            let prior = op.prior_content.clone().unwrap_or_default();
            let mut candidates = find_by_content(state, &prior);
            match candidates.len() {
                0 => Err(ReplayError::MissingUpdateTarget { session, op: index, prior }),
                1 => Ok(Some(MemoryOperation::Update {
                    target_id: candidates.remove(0),
                    new_content: op.content.clone(),
                    timestamp,
                })),
                _ => Err(ReplayError::AmbiguousUpdateTarget { session, op: index, prior, candidates }),
            }
        }
    }
}

/// Applies one session's oracle ops in order. Updates are resolved against
/// the state as it stands when the op is reached.
pub fn replay_session(
    state: &MemoryState,
    record: &SessionRecord,
    session: usize,
    ids: &mut dyn IdSource,
) -> Result<MemoryState, ReplayError> {
    let mut current = state.clone();
    for (index, op) in record.oracle_ops.iter().enumerate() {
        if let Some(memory_op) = resolve_op(&current, op, record.timestamp, session, index)? {
            current = apply_operation(&current, &memory_op, ids)
                .map_err(|source| ReplayError::Memory { session, op: index, source })?;
        }
    }
    Ok(current)
}

/// Target states `S_1 .. S_n` after each session.
pub fn replay_targets(
    initial: &MemoryState,
    sessions: &[SessionRecord],
) -> Result<Vec<MemoryState>, ReplayError> {
    let mut ids = SequentialIds::after(initial);
    let mut current = initial.clone();
    let mut out = Vec::with_capacity(sessions.len());
    for (session, record) in sessions.iter().enumerate() {
        current = replay_session(&current, record, session, &mut ids)?;
        out.push(current.clone());
    }
    Ok(out)
}
