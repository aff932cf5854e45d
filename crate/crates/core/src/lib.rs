//! Persona memory engine.
//!
//! Memory states and their transitions, an in-process vector index, the
//! state-transition reward, the ReAct ingestion runtime, corpus tooling and
//! GRPO math.

pub mod agent;
pub mod api;
pub mod grpo;
pub mod memory;
pub mod pipeline;
pub mod retrieval;
pub mod reward;
pub mod synth;
pub mod text;
