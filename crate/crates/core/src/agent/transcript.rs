//! ReAct transcript grammar.
//!
//! ```text
//! transcript    := (think | tool_exchange)* answer
//! think         := "<think>" text "</think>"
//! tool_exchange := "<tool_call>" json "</tool_call>" "<tool_response>" json "</tool_response>"
//! answer        := "<answer>" json "</answer>"
//! ```
//!
//! Whitespace between blocks is ignored and nothing may follow `</answer>`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEARCH_TOOL: &str = "search_memory";

const THINK: (&str, &str) = ("<think>", "</think>");
const TOOL_CALL: (&str, &str) = ("<tool_call>", "</tool_call>");
const TOOL_RESPONSE: (&str, &str) = ("<tool_response>", "</tool_response>");
const ANSWER: (&str, &str) = ("<answer>", "</answer>");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    MissingAnswer,
    UnknownTag,
    StrayText,
    UnclosedBlock,
    ToolCallPayload,
    UnknownTool,
    EmptyQueries,
    MissingToolResponse,
    UnpairedToolResponse,
    ToolResponsePayload,
    AnswerPayload,
    TrailingContent,
}

impl fmt::Display for ParseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self).expect("rule serializes");
        write!(f, "{}", name.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{rule} at byte {byte_offset}: {message}")]
pub struct ParseError {
    pub byte_offset: usize,
    pub rule: ParseRule,
    pub message: String,
}

impl ParseError {
    fn new(byte_offset: usize, rule: ParseRule, message: impl Into<String>) -> Self {
        Self { byte_offset, rule, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolHit {
    pub id: String,
    pub content: String,
    pub timestamp: i64,
    pub score: f64,
}

/// Operation as written by the agent; timestamps come from the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposedOp {
    Add { content: String },
    Update { id: String, content: String },
    None { content: String },
}

impl ProposedOp {
    pub fn is_write(&self) -> bool {
        !matches!(self, ProposedOp::None { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Think { text: String },
    ToolCall { queries: Vec<String>, top_k: usize },
    ToolResponse { hits: Vec<ToolHit> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// `None` when the transcript never reached a valid answer.
    pub final_ops: Option<Vec<ProposedOp>>,
    pub query_count: usize,
}

impl Trajectory {
    pub fn push(&mut self, step: Step) {
        if let Step::ToolCall { queries, .. } = &step {
            self.query_count += queries.len();
        }
        self.steps.push(step);
    }

    pub fn tool_calls(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::ToolCall { .. }))
            .count()
    }

    /// Every memory id returned by any tool response.
    pub fn retrieved_ids(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().flat_map(|s| match s {
            Step::ToolResponse { hits } => hits.iter().map(|h| h.id.as_str()).collect(),
            _ => Vec::new(),
        })
    }

    pub fn write_count(&self) -> usize {
        self.final_ops
            .as_deref()
            .map_or(0, |ops| ops.iter().filter(|op| op.is_write()).count())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolCallPayload {
    name: String,
    arguments: SearchArguments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchArguments {
    pub queries: Vec<String>,
    pub top_k: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerPayload {
    operations: Vec<ProposedOp>,
}

/// A single lexical block with its byte offset.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Think(String),
    ToolCall(SearchArguments),
    ToolResponse(Vec<ToolHit>),
    Answer(Vec<ProposedOp>),
}

fn skip_ws(raw: &str, pos: usize) -> usize {
    pos + (raw[pos..].len() - raw[pos..].trim_start().len())
}

fn payload<'a>(raw: &'a str, start: usize, tags: (&str, &str)) -> Result<(&'a str, usize), ParseError> {
    let body = start + tags.0.len();
    match raw[body..].find(tags.1) {
        Some(len) => Ok((&raw[body..body + len], body + len + tags.1.len())),
        None => Err(ParseError::new(
            start,
            ParseRule::UnclosedBlock,
            format!("missing {}", tags.1),
        )),
    }
}

fn json<'a, T: Deserialize<'a>>(text: &'a str, offset: usize, rule: ParseRule) -> Result<T, ParseError> {
    serde_json::from_str(text.trim()).map_err(|e| ParseError::new(offset, rule, e.to_string()))
}

/// Splits `raw` into blocks, validating each payload but not the order.
pub fn parse_blocks(raw: &str) -> Result<Vec<(usize, Block)>, ParseError> {
    let mut blocks = Vec::new();
    let mut pos = skip_ws(raw, 0);
    while pos < raw.len() {
        let rest = &raw[pos..];
        let (block, next) = if rest.starts_with(THINK.0) {
            let (text, next) = payload(raw, pos, THINK)?;
            (Block::Think(text.to_owned()), next)
        } else if rest.starts_with(TOOL_CALL.0) {
            let (text, next) = payload(raw, pos, TOOL_CALL)?;
            let offset = pos + TOOL_CALL.0.len();
            let call: ToolCallPayload = json(text, offset, ParseRule::ToolCallPayload)?;
            if call.name != SEARCH_TOOL {
                return Err(ParseError::new(
                    offset,
                    ParseRule::UnknownTool,
                    format!("unknown tool `{}`", call.name),
                ));
            }
            if call.arguments.queries.is_empty() {
                return Err(ParseError::new(offset, ParseRule::EmptyQueries, "queries must be non-empty"));
            }
            if call.arguments.top_k == 0 {
                return Err(ParseError::new(offset, ParseRule::ToolCallPayload, "top_k must be positive"));
            }
            (Block::ToolCall(call.arguments), next)
        } else if rest.starts_with(TOOL_RESPONSE.0) {
            let (text, next) = payload(raw, pos, TOOL_RESPONSE)?;
            let offset = pos + TOOL_RESPONSE.0.len();
            (Block::ToolResponse(json(text, offset, ParseRule::ToolResponsePayload)?), next)
        } else if rest.starts_with(ANSWER.0) {
            let (text, next) = payload(raw, pos, ANSWER)?;
            let offset = pos + ANSWER.0.len();
            let answer: AnswerPayload = json(text, offset, ParseRule::AnswerPayload)?;
            (Block::Answer(answer.operations), next)
        } else if rest.starts_with('<') {
            let tag: String = rest.chars().take_while(|c| *c != '>').take(32).collect();
            return Err(ParseError::new(pos, ParseRule::UnknownTag, format!("unexpected tag `{tag}>`")));
        } else {
            return Err(ParseError::new(pos, ParseRule::StrayText, "text outside of a block"));
        };
        blocks.push((pos, block));
        pos = skip_ws(raw, next);
    }
    Ok(blocks)
}

/// Parses a complete transcript.
pub fn parse_transcript(raw: &str) -> Result<Trajectory, ParseError> {
    let blocks = match parse_blocks(raw) {
        Ok(blocks) => blocks,
        Err(e) => return Err(answer_precedence(raw, e)),
    };
    let mut trajectory = Trajectory::default();
    let mut iter = blocks.into_iter().peekable();
    while let Some((offset, block)) = iter.next() {
        match block {
            Block::Think(text) => trajectory.push(Step::Think { text }),
            Block::ToolCall(args) => {
                trajectory.push(Step::ToolCall { queries: args.queries, top_k: args.top_k });
                match iter.next() {
                    Some((_, Block::ToolResponse(hits))) => trajectory.push(Step::ToolResponse { hits }),
                    Some((at, _)) => {
                        return Err(ParseError::new(
                            at,
                            ParseRule::MissingToolResponse,
                            "tool_call must be followed by tool_response",
                        ))
                    }
                    None => {
                        return Err(ParseError::new(
                            raw.len(),
                            ParseRule::MissingToolResponse,
                            "tool_call must be followed by tool_response",
                        ))
                    }
                }
            }
            Block::ToolResponse(_) => {
                return Err(ParseError::new(
                    offset,
                    ParseRule::UnpairedToolResponse,
                    "tool_response without a preceding tool_call",
                ))
            }
            Block::Answer(ops) => {
                if let Some((at, _)) = iter.next() {
                    return Err(ParseError::new(at, ParseRule::TrailingContent, "content after </answer>"));
                }
                trajectory.final_ops = Some(ops);
                return Ok(trajectory);
            }
        }
    }
    Err(ParseError::new(raw.len(), ParseRule::MissingAnswer, "transcript has no answer block"))
}

/// Anything lexically wrong after a complete answer is reported as trailing
/// content rather than as a block-level error.
fn answer_precedence(raw: &str, err: ParseError) -> ParseError {
    if let Ok(blocks) = parse_blocks(&raw[..err.byte_offset]) {
        if matches!(blocks.last(), Some((_, Block::Answer(_)))) {
            return ParseError::new(err.byte_offset, ParseRule::TrailingContent, "content after </answer>");
        }
    }
    err
}

pub fn render_block(block: &Block) -> String {
    match block {
        Block::Think(text) => format!("{}{}{}", THINK.0, text, THINK.1),
        Block::ToolCall(args) => {
            let payload = ToolCallPayload { name: SEARCH_TOOL.into(), arguments: args.clone() };
            format!(
                "{}{}{}",
                TOOL_CALL.0,
                serde_json::to_string(&payload).expect("tool call serializes"),
                TOOL_CALL.1
            )
        }
        Block::ToolResponse(hits) => format!(
            "{}{}{}",
            TOOL_RESPONSE.0,
            serde_json::to_string(hits).expect("hits serialize"),
            TOOL_RESPONSE.1
        ),
        Block::Answer(ops) => {
            let payload = AnswerPayload { operations: ops.clone() };
            format!(
                "{}{}{}",
                ANSWER.0,
                serde_json::to_string(&payload).expect("answer serializes"),
                ANSWER.1
            )
        }
    }
}

/// Inverse of [`parse_transcript`] for complete trajectories; blocks are
/// separated by newlines.
pub fn render_transcript(trajectory: &Trajectory) -> String {
    let mut blocks: Vec<Block> = trajectory
        .steps
        .iter()
        .map(|step| match step {
            Step::Think { text } => Block::Think(text.clone()),
            Step::ToolCall { queries, top_k } => Block::ToolCall(SearchArguments {
                queries: queries.clone(),
                top_k: *top_k,
            }),
            Step::ToolResponse { hits } => Block::ToolResponse(hits.clone()),
        })
        .collect();
    if let Some(ops) = &trajectory.final_ops {
        blocks.push(Block::Answer(ops.clone()));
    }
    blocks.iter().map(render_block).collect::<Vec<_>>().join("\n")
}
