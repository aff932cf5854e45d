//! Corpus schema, validation, replay, synthesis orchestration and splits.

pub mod corpus;
pub mod orchestrate;
pub mod replay;
pub mod schema;
pub mod split;
pub mod validate;

pub use corpus::{load_corpus, load_manifest, load_user, Corpus, CorpusError};
pub use orchestrate::{synthesize_with_client, Stage, SynthError};
pub use replay::{replay_session, replay_targets, ReplayError};
pub use schema::{
    CorpusManifest, EventRecord, OpKind, OracleOp, PersonaProfile, Role, SessionRecord,
    StateDelta, SynthesisConfig, Turn, UserBundle, SCHEMA_VERSION,
};
pub use split::{split_corpus, CorpusSplit, InvalidRatio, DEFAULT_SPLIT_RATIO};
pub use validate::{
    validate_events, validate_profile, validate_session, validate_user, Severity,
    ValidationReport, Violation, ViolationCode,
};
