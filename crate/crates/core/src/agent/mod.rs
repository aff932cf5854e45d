//! The memory agent: transcript grammar, chat clients and the ingestion loop.

pub mod client;
pub mod runtime;
pub mod transcript;

pub use client::{ChatClient, ChatMessage, ChatRole, ClientError, OracleClient, ScriptedClient};
pub use runtime::{
    ingest_user, qpm, qpm_from_counts, run_session, IngestError, IngestResult, Qpm, SessionConfig,
    SessionError, SessionOutcome,
};
pub use transcript::{
    parse_transcript, render_transcript, ParseError, ParseRule, ProposedOp, Step, ToolHit,
    Trajectory,
};
