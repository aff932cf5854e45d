//! Corpus file schema.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::memory::MemoryState;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Add,
    Update,
    None,
}

/// Ground-truth session operation. Updates name their target by the prior
/// content string rather than by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOp {
    pub kind: OpKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_content: Option<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_id: Option<String>,
}

impl OracleOp {
    pub fn add(content: &str, keywords: &[&str]) -> Self {
        Self {
            kind: OpKind::Add,
            content: content.into(),
            prior_content: None,
            keywords: keywords.iter().map(|k| (*k).to_owned()).collect(),
            fact_id: None,
        }
    }

    pub fn update(prior: &str, content: &str, keywords: &[&str]) -> Self {
        Self {
            kind: OpKind::Update,
            content: content.into(),
            prior_content: Some(prior.into()),
            keywords: keywords.iter().map(|k| (*k).to_owned()).collect(),
            fact_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub timestamp: i64,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub oracle_ops: Vec<OracleOp>,
    /// fact id -> index into `turns` where the fact is introduced.
    #[serde(default)]
    pub fact_schedule: BTreeMap<String, usize>,
}

impl SessionRecord {
    /// Plain-text rendering used in prompts.
    pub fn dialogue_text(&self) -> String {
        self.turns
            .iter()
            .map(|t| {
                let who = match t.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                format!("{who}: {}", t.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaProfile {
    pub seed: String,
    #[serde(default)]
    pub static_traits: Vec<String>,
    #[serde(default)]
    pub dynamic_facts: Vec<String>,
}

/// Event-level operator on one life track.
///
/// Kept as a string on the wire so unknown operators survive loading and
/// are reported by validation instead of failing deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDelta {
    pub track: String,
    pub operator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_state: Option<String>,
    pub new_state: String,
}

pub const TRACKS: [&str; 4] = ["career", "health", "relationships", "preferences"];
pub const OPERATORS: [&str; 5] = ["new", "expand", "adjust", "shift", "partial_deletion"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub index: usize,
    pub date: NaiveDate,
    pub domain: String,
    pub summary: String,
    #[serde(default)]
    pub deltas: Vec<StateDelta>,
}

/// Everything synthesized for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    pub profile: PersonaProfile,
    #[serde(default)]
    pub initial_state: MemoryState,
    #[serde(default)]
    pub events: Vec<EventRecord>,
    #[serde(default)]
    pub sessions: Vec<SessionRecord>,
}

impl UserBundle {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("bundle serializes");
        out.push('\n');
        out
    }
}

/// Limits the validators check against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub n_events: usize,
    pub domains: Vec<String>,
    /// Allowed first-to-last event span in years, inclusive.
    pub span_years: [f64; 2],
    /// Allowed turns per session, inclusive.
    pub turns: [usize; 2],
    /// Soft range of add operations per session.
    pub adds_per_session: [usize; 2],
    /// Soft range of words per memory statement.
    pub statement_words: [usize; 2],
    /// Extra attempts per synthesis stage after the first failure.
    pub max_retries: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_events: 25,
            domains: ["work", "health", "finance", "relationships", "hobbies", "travel"]
                .map(String::from)
                .to_vec(),
            span_years: [1.0, 3.0],
            turns: [4, 40],
            adds_per_session: [6, 10],
            statement_words: [5, 40],
            max_retries: 2,
        }
    }
}

/// Corpus index: user files relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub users: Vec<String>,
    #[serde(default)]
    pub config: SynthesisConfig,
}

impl Default for CorpusManifest {
    fn default() -> Self {
        Self { schema_version: SCHEMA_VERSION, users: Vec::new(), config: SynthesisConfig::default() }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Add => "add",
            OpKind::Update => "update",
            OpKind::None => "none",
        })
    }
}
