//! Single-agent ingestion loop: reason, search, emit operations.

use std::fmt;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatClient, ChatMessage, ChatRole};
use super::transcript::{
    parse_blocks, parse_transcript, render_block, Block, ParseError, ProposedOp, Step, ToolHit,
    Trajectory,
};
use crate::memory::{
    apply_operations, state_fingerprint, IdSource, MemoryOperation, MemoryState, SequentialIds,
};
use crate::retrieval::{Embedder, VectorIndex, DEFAULT_TOP_K};
use crate::synth::schema::SessionRecord;

pub const PROMPT_TEMPLATE: &str = include_str!("../../resources/prompts/memory_agent.v1.txt");
pub const DEFAULT_MAX_TOOL_CALLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub top_k: usize,
    pub max_tool_calls: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K, max_tool_calls: DEFAULT_MAX_TOOL_CALLS }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SessionError {
    #[error("client error: {0}")]
    Client(String),
    #[error("malformed reply: {0}")]
    Parse(ParseError),
    #[error("reply broke the turn protocol: {0}")]
    Protocol(String),
    #[error("more than {0} tool calls")]
    ToolBudget(usize),
    #[error("operations rejected: {0}")]
    Apply(String),
}

/// Result of one session. On error the state is the input state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub state: MemoryState,
    pub trajectory: Trajectory,
    pub transcript: String,
    pub error: Option<SessionError>,
}

impl SessionOutcome {
    pub fn is_malformed(&self) -> bool {
        matches!(
            self.error,
            Some(SessionError::Parse(_) | SessionError::Protocol(_) | SessionError::ToolBudget(_) | SessionError::Client(_))
        )
    }
}

pub fn render_prompt(session: &SessionRecord, cfg: &SessionConfig) -> String {
    let date = DateTime::from_timestamp(session.timestamp, 0)
        .map(|d| d.format("%Y-%m-%d %H:%M UTC").to_string())
        .unwrap_or_else(|| "an unknown date".into());
    PROMPT_TEMPLATE
        .replace("{{date}}", &date)
        .replace("{{timestamp}}", &session.timestamp.to_string())
        .replace("{{top_k}}", &cfg.top_k.to_string())
        .replace("{{max_tool_calls}}", &cfg.max_tool_calls.to_string())
}

/// Runs every query against the index; hits are concatenated in query order.
pub fn execute_search(
    index: &VectorIndex,
    state: &MemoryState,
    queries: &[String],
    top_k: usize,
    embedder: &dyn Embedder,
) -> Vec<ToolHit> {
    queries
        .iter()
        .flat_map(|q| index.search(q, top_k, embedder))
        .filter_map(|hit| {
            state.get(&hit.id).map(|m| ToolHit {
                id: hit.id,
                content: m.content.clone(),
                timestamp: m.timestamp,
                score: hit.score,
            })
        })
        .collect()
}

pub fn to_memory_ops(ops: &[ProposedOp], timestamp: i64) -> Vec<MemoryOperation> {
    ops.iter()
        .map(|op| match op {
            ProposedOp::Add { content } => MemoryOperation::Add { content: content.clone(), timestamp },
            ProposedOp::Update { id, content } => MemoryOperation::Update {
                target_id: id.clone(),
                new_content: content.clone(),
                timestamp,
            },
            ProposedOp::None { content } => MemoryOperation::NoneOp { content: content.clone() },
        })
        .collect()
}

struct Session<'a> {
    state: &'a MemoryState,
    trajectory: Trajectory,
    transcript: String,
}

impl Session<'_> {
    fn append(&mut self, text: &str) {
        if !self.transcript.is_empty() {
            self.transcript.push('\n');
        }
        self.transcript.push_str(text.trim());
    }

    fn fail(self, error: SessionError) -> SessionOutcome {
        SessionOutcome {
            state: self.state.clone(),
            trajectory: self.trajectory,
            transcript: self.transcript,
            error: Some(error),
        }
    }
}

/// One state transition `S_t -> S_{t+1}` driven by `client`.
///
/// `index` must be synced to `state` on entry; it is re-synced to the
/// returned state.
pub fn run_session(
    state: &MemoryState,
    index: &mut VectorIndex,
    session: &SessionRecord,
    client: &mut dyn ChatClient,
    embedder: &dyn Embedder,
    ids: &mut dyn IdSource,
    cfg: &SessionConfig,
) -> SessionOutcome {
    let mut messages = vec![
        ChatMessage::new(ChatRole::System, render_prompt(session, cfg)),
        ChatMessage::new(ChatRole::User, session.dialogue_text()),
    ];
    let mut run = Session { state, trajectory: Trajectory::default(), transcript: String::new() };

    let ops = loop {
        let reply = match client.complete(&messages) {
            Ok(reply) => reply,
            Err(e) => return run.fail(SessionError::Client(e.to_string())),
        };
        messages.push(ChatMessage::new(ChatRole::Assistant, reply.clone()));
        run.append(&reply);

        let blocks = match parse_blocks(&reply) {
            Ok(blocks) => blocks,
            Err(e) => return run.fail(SessionError::Parse(e)),
        };
        let last = blocks.len().saturating_sub(1);
        let mut answer = None;
        let mut search = None;
        for (i, (_, block)) in blocks.into_iter().enumerate() {
            match block {
                Block::Think(text) => run.trajectory.push(Step::Think { text }),
                Block::ToolResponse(_) => {
                    return run.fail(SessionError::Protocol("agent wrote a tool_response".into()))
                }
                Block::ToolCall(_) | Block::Answer(_) if i != last => {
                    return run.fail(SessionError::Protocol("an action must end the reply".into()))
                }
                Block::ToolCall(args) => search = Some(args),
                Block::Answer(ops) => answer = Some(ops),
            }
        }
        if let Some(ops) = answer {
            break ops;
        }
        let Some(args) = search else {
            return run.fail(SessionError::Protocol("reply contains no action".into()));
        };
        if run.trajectory.tool_calls() >= cfg.max_tool_calls {
            return run.fail(SessionError::ToolBudget(cfg.max_tool_calls));
        }
        let hits = execute_search(index, state, &args.queries, cfg.top_k, embedder);
        run.trajectory.push(Step::ToolCall { queries: args.queries, top_k: args.top_k });
        let response = render_block(&Block::ToolResponse(hits.clone()));
        run.trajectory.push(Step::ToolResponse { hits });
        run.append(&response);
        messages.push(ChatMessage::new(ChatRole::Tool, response));
    };

    run.trajectory.final_ops = Some(ops.clone());
    debug_assert_eq!(parse_transcript(&run.transcript).as_ref(), Ok(&run.trajectory));

    match apply_operations(state, &to_memory_ops(&ops, session.timestamp), ids) {
        Ok(next) => {
            index.sync(&next, embedder);
            SessionOutcome {
                state: next,
                trajectory: run.trajectory,
                transcript: run.transcript,
                error: None,
            }
        }
        Err(e) => run.fail(SessionError::Apply(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("session {index} is earlier than session {}", index - 1)]
    OutOfOrderSessions { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    pub final_state: MemoryState,
    pub sessions: Vec<SessionOutcome>,
    /// Fingerprint of the state after each session.
    pub fingerprints: Vec<u64>,
}

/// Folds [`run_session`] over chronologically ordered sessions. A failed
/// session is a no-op transition; the fold continues.
pub fn ingest_user(
    initial: &MemoryState,
    sessions: &[SessionRecord],
    client: &mut dyn ChatClient,
    embedder: &dyn Embedder,
    cfg: &SessionConfig,
) -> Result<IngestResult, IngestError> {
    if let Some(i) = sessions.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(IngestError::OutOfOrderSessions { index: i + 1 });
    }
    let mut ids = SequentialIds::after(initial);
    let mut index = VectorIndex::new(embedder.dimension());
    index.sync(initial, embedder);
    let mut state = initial.clone();
    let mut outcomes = Vec::with_capacity(sessions.len());
    let mut fingerprints = Vec::with_capacity(sessions.len());
    for session in sessions {
        let outcome = run_session(&state, &mut index, session, client, embedder, &mut ids, cfg);
        state = outcome.state.clone();
        if outcome.error.is_some() {
            index.sync(&state, embedder);
        }
        fingerprints.push(state_fingerprint(&state));
        outcomes.push(outcome);
    }
    Ok(IngestResult { final_state: state, sessions: outcomes, fingerprints })
}

/// Queries per memory written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qpm {
    Finite(f64),
    /// Queries were issued but nothing was written.
    Infinite,
}

impl Qpm {
    pub fn value(&self) -> f64 {
        match self {
            Qpm::Finite(v) => *v,
            Qpm::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Qpm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qpm::Finite(v) => write!(f, "{v:.2}"),
            Qpm::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Qpm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Qpm::Finite(v) => serializer.serialize_f64(*v),
            Qpm::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Qpm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(Qpm::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Qpm::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid qpm `{t}`"))),
        }
    }
}

pub fn qpm_from_counts(queries: usize, writes: usize) -> Qpm {
    match (queries, writes) {
        (0, 0) => Qpm::Finite(0.0),
        (_, 0) => Qpm::Infinite,
        (q, w) => Qpm::Finite(q as f64 / w as f64),
    }
}

/// Total search queries over total writes (adds and updates).
pub fn qpm(trajectories: &[&Trajectory], write_counts: &[usize]) -> Qpm {
    let queries = trajectories.iter().map(|t| t.query_count).sum();
    qpm_from_counts(queries, write_counts.iter().sum())
}
