use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transcript::{parse_blocks, render_block, Block, ProposedOp, SearchArguments, ToolHit};
use crate::synth::schema::{OpKind, OracleOp, SessionRecord};
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, text: impl Into<String>) -> Self {
        Self { role, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("scripted client has no responses left")]
    Exhausted,
    #[error("chat backend error: {0}")]
    Backend(String),
}

/// A chat-completion backend driving the memory agent.
pub trait ChatClient: Send {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ClientError>;

    /// Whether equal message histories always produce equal replies.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Replays a fixed list of replies in order, one per call.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    replies: VecDeque<String>,
}

impl ScriptedClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { replies: replies.into_iter().map(Into::into).collect() }
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&mut self, _messages: &[ChatMessage]) -> Result<String, ClientError> {
        self.replies.pop_front().ok_or(ClientError::Exhausted)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Plays back the oracle operations of each session in turn.
///
/// A new session starts whenever the history holds no assistant message.
/// Sessions with updates first search for every prior content, then answer
/// using the ids found in the tool response.
#[derive(Debug, Clone)]
pub struct OracleClient {
    sessions: VecDeque<Vec<OracleOp>>,
    current: Option<Vec<OracleOp>>,
    top_k: usize,
}

impl OracleClient {
    pub fn new(sessions: &[SessionRecord], top_k: usize) -> Self {
        Self {
            sessions: sessions.iter().map(|s| s.oracle_ops.clone()).collect(),
            current: None,
            top_k,
        }
    }

    fn answer(ops: &[OracleOp], hits: &[ToolHit]) -> String {
        let proposed = ops
            .iter()
            .filter_map(|op| match op.kind {
                OpKind::Add => Some(ProposedOp::Add { content: op.content.clone() }),
                OpKind::None => Some(ProposedOp::None { content: op.content.clone() }),
                OpKind::Update => {
                    let prior = normalize_text(op.prior_content.as_deref().unwrap_or_default());
                    hits.iter()
                        .find(|h| normalize_text(&h.content) == prior)
                        .map(|h| ProposedOp::Update { id: h.id.clone(), content: op.content.clone() })
                }
            })
            .collect();
        render_block(&Block::Answer(proposed))
    }
}

impl ChatClient for OracleClient {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let fresh = !messages.iter().any(|m| m.role == ChatRole::Assistant);
        if fresh {
            self.current = Some(self.sessions.pop_front().ok_or(ClientError::Exhausted)?);
        }
        let ops = self.current.as_ref().ok_or(ClientError::Exhausted)?;
        let priors: Vec<String> = ops
            .iter()
            .filter(|op| op.kind == OpKind::Update)
            .filter_map(|op| op.prior_content.clone())
            .collect();

        if fresh && !priors.is_empty() {
            let think = render_block(&Block::Think(format!(
                "{} stored memories may change; looking them up.",
                priors.len()
            )));
            let call = render_block(&Block::ToolCall(SearchArguments { queries: priors, top_k: self.top_k }));
            return Ok(format!("{think}\n{call}"));
        }

        let mut hits = Vec::new();
        if let Some(last) = messages.iter().rev().find(|m| m.role == ChatRole::Tool) {
            if let Ok(blocks) = parse_blocks(&last.text) {
                for (_, block) in blocks {
                    if let Block::ToolResponse(found) = block {
                        hits.extend(found);
                    }
                }
            }
        }
        let think = render_block(&Block::Think(format!("Recording {} operations.", ops.len())));
        Ok(format!("{think}\n{}", Self::answer(ops, &hits)))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
