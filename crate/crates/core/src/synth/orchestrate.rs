//! Four-stage synthesis driven by a chat client: profile enrichment, event
//! generation, then memory and dialogue generation per event.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveTime;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::replay::replay_session;
use super::schema::{
    EventRecord, OracleOp, PersonaProfile, SessionRecord, SynthesisConfig, Turn, UserBundle,
};
use super::validate::{validate_events, validate_profile, validate_session, ValidationReport};
use crate::agent::client::{ChatClient, ChatMessage, ChatRole};
use crate::memory::{IdSource, MemoryEntry, MemoryState, SequentialIds};

const PROFILE_PROMPT: &str = include_str!("../../resources/prompts/profile_enrichment.v1.txt");
const EVENT_PROMPT: &str = include_str!("../../resources/prompts/event_generation.v1.txt");
const MEMORY_PROMPT: &str = include_str!("../../resources/prompts/memory_generation.v1.txt");
const DIALOGUE_PROMPT: &str = include_str!("../../resources/prompts/dialogue_generation.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ProfileEnrichment,
    EventGeneration,
    MemoryGeneration,
    DialogueGeneration,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ProfileEnrichment => "profile_enrichment",
            Stage::EventGeneration => "event_generation",
            Stage::MemoryGeneration => "memory_generation",
            Stage::DialogueGeneration => "dialogue_generation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("stage {stage} failed after {attempts} attempts: {last_error}")]
    StageFailed { stage: Stage, attempts: usize, last_error: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileOutput {
    static_traits: Vec<String>,
    dynamic_facts: Vec<String>,
    initial_memories: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsOutput {
    events: Vec<EventRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryOutput {
    operations: Vec<OracleOp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueOutput {
    turns: Vec<Turn>,
    fact_schedule: BTreeMap<String, usize>,
}

/// The JSON object in a reply, tolerating surrounding prose or code fences.
fn extract_json<T: DeserializeOwned>(reply: &str) -> Result<T, String> {
    let start = reply.find('{').ok_or("reply contains no JSON object")?;
    let end = reply.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())
}

fn report_errors(report: &ValidationReport) -> Result<(), String> {
    let errors: Vec<String> = report
        .errors()
        .map(|v| format!("{:?}: {}", v.code, v.message))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

/// Calls the client until `accept` succeeds, feeding each failure back as a
/// correction request. Gives up after `1 + max_retries` attempts.
fn run_stage<T, F>(
    client: &mut dyn ChatClient,
    stage: Stage,
    prompt: String,
    max_retries: usize,
    mut accept: F,
) -> Result<T, SynthError>
where
    F: FnMut(&str) -> Result<T, String>,
{
    let mut messages = vec![
        ChatMessage::new(ChatRole::System, "You produce strictly valid JSON for a data pipeline."),
        ChatMessage::new(ChatRole::User, prompt),
    ];
    let attempts = max_retries + 1;
    let mut last_error = String::new();
    for _ in 0..attempts {
        let reply = match client.complete(&messages) {
            Ok(reply) => reply,
            Err(e) => {
                last_error = e.to_string();
                continue;
            }
        };
        match accept(&reply) {
            Ok(value) => return Ok(value),
            Err(e) => {
                messages.push(ChatMessage::new(ChatRole::Assistant, reply));
                messages.push(ChatMessage::new(
                    ChatRole::User,
                    format!("That output was rejected: {e}. Reply again with corrected JSON only."),
                ));
                last_error = e;
            }
        }
    }
    Err(SynthError::StageFailed { stage, attempts, last_error })
}

fn pretty(value: serde_json::Value) -> String {
    serde_json::to_string_pretty(&value).expect("json value serializes")
}

fn event_timestamp(event: &EventRecord) -> i64 {
    event.date.and_time(NaiveTime::MIN).and_utc().timestamp()
}

/// Produces one validated user bundle from a persona seed.
pub fn synthesize_with_client(
    client: &mut dyn ChatClient,
    persona_seed: &str,
    cfg: &SynthesisConfig,
) -> Result<UserBundle, SynthError> {
    let retries = cfg.max_retries;

    let (profile, initial_state) = run_stage(
        client,
        Stage::ProfileEnrichment,
        PROFILE_PROMPT.replace("{{input}}", persona_seed),
        retries,
        |reply| {
            let out: ProfileOutput = extract_json(reply)?;
            let profile = PersonaProfile {
                seed: persona_seed.to_owned(),
                static_traits: out.static_traits,
                dynamic_facts: out.dynamic_facts,
            };
            report_errors(&validate_profile(&profile))?;
            let mut ids = SequentialIds::new();
            let state = MemoryState::from_entries(out.initial_memories.into_iter().map(|content| {
                MemoryEntry { id: ids.next_id(), content, timestamp: 0 }
            }))
            .map_err(|e| e.to_string())?;
            Ok((profile, state))
        },
    )?;

    let events: Vec<EventRecord> = run_stage(
        client,
        Stage::EventGeneration,
        EVENT_PROMPT
            .replace("{{n_events}}", &cfg.n_events.to_string())
            .replace("{{span_min}}", &cfg.span_years[0].to_string())
            .replace("{{span_max}}", &cfg.span_years[1].to_string())
            .replace("{{domains}}", &cfg.domains.join(", "))
            .replace("{{input}}", &pretty(json!({ "profile": profile }))),
        retries,
        |reply| {
            let out: EventsOutput = extract_json(reply)?;
            report_errors(&validate_events(&profile, &out.events, cfg))?;
            Ok(out.events)
        },
    )?;

    let mut ids = SequentialIds::after(&initial_state);
    let mut state = initial_state.clone();
    let mut sessions = Vec::with_capacity(events.len());
    for (i, event) in events.iter().enumerate() {
        let timestamp = event_timestamp(event);
        let memories: Vec<&str> = state.iter().map(|(_, m)| m.content.as_str()).collect();
        let ops: Vec<OracleOp> = run_stage(
            client,
            Stage::MemoryGeneration,
            MEMORY_PROMPT.replace(
                "{{input}}",
                &pretty(json!({ "profile": profile, "event": event, "memories": memories })),
            ),
            retries,
            |reply| {
                let mut out: MemoryOutput = extract_json(reply)?;
                for (k, op) in out.operations.iter_mut().enumerate() {
                    op.fact_id.get_or_insert_with(|| format!("f{}", k + 1));
                }
                let probe = SessionRecord {
                    session_id: String::new(),
                    timestamp,
                    turns: Vec::new(),
                    oracle_ops: out.operations.clone(),
                    fact_schedule: BTreeMap::new(),
                };
                replay_session(&state, &probe, i, &mut SequentialIds::after(&state))
                    .map_err(|e| e.to_string())?;
                Ok(out.operations)
            },
        )?;

        let record = run_stage(
            client,
            Stage::DialogueGeneration,
            DIALOGUE_PROMPT
                .replace("{{turns_min}}", &cfg.turns[0].to_string())
                .replace("{{turns_max}}", &cfg.turns[1].to_string())
                .replace(
                    "{{input}}",
                    &pretty(json!({ "profile": profile, "event": event, "facts": ops })),
                ),
            retries,
            |reply| {
                let out: DialogueOutput = extract_json(reply)?;
                let record = SessionRecord {
                    session_id: format!("s{:02}", i + 1),
                    timestamp,
                    turns: out.turns,
                    oracle_ops: ops.clone(),
                    fact_schedule: out.fact_schedule,
                };
                report_errors(&validate_session(&record, &state, cfg))?;
                Ok(record)
            },
        )?;

        state = replay_session(&state, &record, i, &mut ids)
            .expect("memory stage already checked these operations");
        sessions.push(record);
    }

    Ok(UserBundle { user_id: None, profile, initial_state, events, sessions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::client::ScriptedClient;

    #[test]
    fn extracts_fenced_json() {
        let v: serde_json::Value = extract_json("```json\n{\"a\": 1}\n```").unwrap();
        assert_eq!(v["a"], 1);
        assert!(extract_json::<serde_json::Value>("no json").is_err());
    }

    #[test]
    fn profile_stage_fails_after_retries() {
        let mut client = ScriptedClient::new(["nope", "nope", "nope"]);
        let cfg = SynthesisConfig { max_retries: 2, ..SynthesisConfig::default() };
        let err = synthesize_with_client(&mut client, "a teacher", &cfg).unwrap_err();
        assert_eq!(
            err,
            SynthError::StageFailed {
                stage: Stage::ProfileEnrichment,
                attempts: 3,
                last_error: "reply contains no JSON object".into()
            }
        );
        assert_eq!(client.remaining(), 0);
    }
}
