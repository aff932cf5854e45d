mod common;

use std::fs;

use common::fixture;
use deltamem_core::agent::ScriptedClient;
use deltamem_core::synth::{
    replay_targets, synthesize_with_client, validate_user, Stage, SynthError, SynthesisConfig,
    UserBundle,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Script {
    seed: String,
    config: SynthesisConfig,
    replies: Vec<String>,
}

fn script() -> Script {
    serde_json::from_str(&fs::read_to_string(fixture("synth_script.json")).unwrap()).unwrap()
}

#[test]
fn scripted_synthesis_produces_a_valid_bundle() {
    let s = script();
    let mut client = ScriptedClient::new(s.replies.clone());
    let bundle = synthesize_with_client(&mut client, &s.seed, &s.config).unwrap();
    assert_eq!(client.remaining(), 0);
    assert_eq!(bundle.sessions.len(), 3);
    assert_eq!(bundle.sessions[1].session_id, "s02");
    assert_eq!(bundle.sessions[1].timestamp, 1_694_736_000);
    let report = validate_user(&bundle, &s.config);
    assert_eq!(report.error_count(), 0, "{:#?}", report.violations);

    let reloaded: UserBundle = serde_json::from_str(&bundle.to_json()).unwrap();
    assert_eq!(reloaded, bundle);
    let targets = replay_targets(&reloaded.initial_state, &reloaded.sessions).unwrap();
    assert_eq!(targets.last().unwrap().len(), 6);
}

#[test]
fn retries_recover_from_a_bad_reply() {
    let s = script();
    let mut replies = s.replies.clone();
    replies.insert(1, "{\"events\": \"soon\"}".into());
    let mut client = ScriptedClient::new(replies);
    assert!(synthesize_with_client(&mut client, &s.seed, &s.config).is_ok());
}

#[test]
fn malformed_event_stage_fails_after_all_attempts() {
    let s = script();
    let attempts = s.config.max_retries + 1;
    let mut replies = vec![s.replies[0].clone()];
    replies.extend(std::iter::repeat_n("not json at all".to_owned(), attempts));
    let mut client = ScriptedClient::new(replies);
    let err = synthesize_with_client(&mut client, &s.seed, &s.config).unwrap_err();
    let SynthError::StageFailed { stage, attempts: used, .. } = err;
    assert_eq!((stage, used), (Stage::EventGeneration, attempts));
}

#[test]
fn invalid_events_are_rejected_by_validators() {
    let s = script();
    let bad_events = s.replies[1].replace("\"adjust\"", "\"promote\"");
    let mut replies = vec![s.replies[0].clone()];
    replies.extend(std::iter::repeat_n(bad_events, s.config.max_retries + 1));
    let mut client = ScriptedClient::new(replies);
    let err = synthesize_with_client(&mut client, &s.seed, &s.config).unwrap_err();
    assert!(err.to_string().contains("UnknownOperator"), "{err}");
}
