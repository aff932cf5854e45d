//! Report-based validators for synthesized corpora.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::replay::{find_by_content, replay_session};
use super::schema::{
    EventRecord, OpKind, PersonaProfile, Role, SessionRecord, SynthesisConfig, UserBundle,
    OPERATORS, TRACKS,
};
use crate::memory::{MemoryState, SequentialIds};
use crate::text::{contains_phrase, normalize_text, tokens, word_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    ProfileSeedEmpty,
    ProfileOverlap,
    EventCount,
    DateOrder,
    DateSpan,
    UnknownDomain,
    DomainCoverage,
    UnknownTrack,
    UnknownOperator,
    MissingPriorState,
    PreservationInvariant,
    SessionEventMismatch,
    SessionOrder,
    TurnCount,
    EmptyContent,
    MissingPriorContent,
    UpdateTargetMissing,
    UpdateTargetAmbiguous,
    ScheduleOutOfRange,
    ScheduleNotUserTurn,
    ScheduleMismatch,
    UserFirst,
    FactNotIntroduced,
    AddCount,
    StatementLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, code: ViolationCode, severity: Severity, location: Location, message: String) {
        self.violations.push(Violation { code, severity, location, message });
    }

    fn error(&mut self, code: ViolationCode, location: Location, message: String) {
        self.push(code, Severity::Error, location, message);
    }

    fn warn(&mut self, code: ViolationCode, location: Location, message: String) {
        self.push(code, Severity::Warning, location, message);
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Warning)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn is_ok(&self) -> bool {
        self.error_count() == 0
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    fn tag_user(mut self, user: &str) -> Self {
        for v in &mut self.violations {
            v.location.user = Some(user.to_owned());
        }
        self
    }

    fn tag_session(mut self, session: usize) -> Self {
        for v in &mut self.violations {
            v.location.session = Some(session);
        }
        self
    }
}

fn at_event(event: usize) -> Location {
    Location { event: Some(event), ..Location::default() }
}

fn at_op(op: usize) -> Location {
    Location { op: Some(op), ..Location::default() }
}

fn at_turn(turn: usize) -> Location {
    Location { turn: Some(turn), ..Location::default() }
}

pub fn validate_profile(profile: &PersonaProfile) -> ValidationReport {
    let mut report = ValidationReport::default();
    if profile.seed.trim().is_empty() {
        report.error(ViolationCode::ProfileSeedEmpty, Location::default(), "persona seed is empty".into());
    }
    let statics: HashSet<String> = profile.static_traits.iter().map(|t| normalize_text(t)).collect();
    for fact in &profile.dynamic_facts {
        if statics.contains(&normalize_text(fact)) {
            report.error(
                ViolationCode::ProfileOverlap,
                Location::default(),
                format!("`{fact}` is both a static trait and a dynamic fact"),
            );
        }
    }
    report
}

/// Event list checks: count, chronology, span, domains, operator
/// vocabulary, and the preservation invariant via per-track simulation.
pub fn validate_events(
    profile: &PersonaProfile,
    events: &[EventRecord],
    cfg: &SynthesisConfig,
) -> ValidationReport {
    let mut report = validate_profile(profile);

    if events.len() != cfg.n_events {
        report.error(
            ViolationCode::EventCount,
            Location::default(),
            format!("count {} ≠ {}", events.len(), cfg.n_events),
        );
    }

    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].date <= pair[0].date {
            report.error(
                ViolationCode::DateOrder,
                at_event(i + 1),
                format!("{} does not follow {}", pair[1].date, pair[0].date),
            );
        }
    }

    if let (Some(first), Some(last)) = (events.first(), events.last()) {
        let years = (last.date - first.date).num_days() as f64 / 365.25;
        if years < cfg.span_years[0] || years > cfg.span_years[1] {
            report.error(
                ViolationCode::DateSpan,
                Location::default(),
                format!(
                    "span {years:.2} years outside [{}, {}]",
                    cfg.span_years[0], cfg.span_years[1]
                ),
            );
        }
    }

    let known: HashSet<&str> = cfg.domains.iter().map(String::as_str).collect();
    let mut seen_domains = HashSet::new();
    for (i, event) in events.iter().enumerate() {
        if known.contains(event.domain.as_str()) {
            seen_domains.insert(event.domain.as_str());
        } else {
            report.error(
                ViolationCode::UnknownDomain,
                at_event(i),
                format!("domain `{}` is not configured", event.domain),
            );
        }
    }
    if !events.is_empty() {
        for domain in &cfg.domains {
            if !seen_domains.contains(domain.as_str()) {
                report.warn(
                    ViolationCode::DomainCoverage,
                    Location::default(),
                    format!("no event covers domain `{domain}`"),
                );
            }
        }
    }

    let mut tracks: HashMap<&str, &str> = HashMap::new();
    for (i, event) in events.iter().enumerate() {
        for delta in &event.deltas {
            if !TRACKS.contains(&delta.track.as_str()) {
                report.error(ViolationCode::UnknownTrack, at_event(i), format!("unknown track `{}`", delta.track));
                continue;
            }
            if !OPERATORS.contains(&delta.operator.as_str()) {
                report.error(
                    ViolationCode::UnknownOperator,
                    at_event(i),
                    format!("unknown operator `{}`", delta.operator),
                );
                continue;
            }
            if delta.operator != "new" {
                match (&delta.prior_state, tracks.get(delta.track.as_str())) {
                    (None, _) => report.error(
                        ViolationCode::MissingPriorState,
                        at_event(i),
                        format!("`{}` on track {} must restate the prior state", delta.operator, delta.track),
                    ),
                    (Some(prior), Some(current)) if prior == current => {}
                    (Some(prior), current) => report.error(
                        ViolationCode::PreservationInvariant,
                        at_event(i),
                        format!(
                            "prior state `{prior}` does not match tracked `{}` on track {}",
                            current.copied().unwrap_or("<unset>"),
                            delta.track
                        ),
                    ),
                }
            }
            tracks.insert(delta.track.as_str(), delta.new_state.as_str());
        }
    }
    report
}

/// Final tracked string per track after replaying every delta.
pub fn simulate_tracks(events: &[EventRecord]) -> HashMap<String, String> {
    let mut tracks = HashMap::new();
    for delta in events.iter().flat_map(|e| &e.deltas) {
        if TRACKS.contains(&delta.track.as_str()) && OPERATORS.contains(&delta.operator.as_str()) {
            tracks.insert(delta.track.clone(), delta.new_state.clone());
        }
    }
    tracks
}

fn mentions(turn_tokens: &[String], keyword: &str) -> bool {
    contains_phrase(turn_tokens, &tokens(keyword))
}

/// Per-session checks against the replayed state preceding the session.
pub fn validate_session(
    record: &SessionRecord,
    prior_state: &MemoryState,
    cfg: &SynthesisConfig,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n_turns = record.turns.len();
    if n_turns < cfg.turns[0] || n_turns > cfg.turns[1] {
        report.error(
            ViolationCode::TurnCount,
            Location::default(),
            format!("{n_turns} turns outside [{}, {}]", cfg.turns[0], cfg.turns[1]),
        );
    }

    let mut adds = 0;
    for (k, op) in record.oracle_ops.iter().enumerate() {
        if op.content.trim().is_empty() {
            report.error(ViolationCode::EmptyContent, at_op(k), "operation content is empty".into());
        }
        match op.kind {
            OpKind::Add => adds += 1,
            OpKind::Update => match &op.prior_content {
                None => report.error(
                    ViolationCode::MissingPriorContent,
                    at_op(k),
                    "update without prior_content".into(),
                ),
                Some(prior) => match find_by_content(prior_state, prior).len() {
                    0 => report.error(
                        ViolationCode::UpdateTargetMissing,
                        at_op(k),
                        format!("`{prior}` is not in the prior state"),
                    ),
                    1 => {}
                    n => report.error(
                        ViolationCode::UpdateTargetAmbiguous,
                        at_op(k),
                        format!("`{prior}` matches {n} memories"),
                    ),
                },
            },
            OpKind::None => {}
        }
        if op.kind != OpKind::None {
            let words = word_count(&op.content);
            if words < cfg.statement_words[0] || words > cfg.statement_words[1] {
                report.warn(
                    ViolationCode::StatementLength,
                    at_op(k),
                    format!(
                        "{words} words outside [{}, {}]",
                        cfg.statement_words[0], cfg.statement_words[1]
                    ),
                );
            }
        }
    }
    if adds < cfg.adds_per_session[0] || adds > cfg.adds_per_session[1] {
        report.warn(
            ViolationCode::AddCount,
            Location::default(),
            format!(
                "{adds} add operations outside [{}, {}]",
                cfg.adds_per_session[0], cfg.adds_per_session[1]
            ),
        );
    }

    for (fact, &turn) in &record.fact_schedule {
        match record.turns.get(turn) {
            None => report.error(
                ViolationCode::ScheduleOutOfRange,
                at_turn(turn),
                format!("fact `{fact}` scheduled at turn {turn} of {n_turns}"),
            ),
            Some(t) if t.role != Role::User => report.error(
                ViolationCode::ScheduleNotUserTurn,
                at_turn(turn),
                format!("fact `{fact}` scheduled on an assistant turn"),
            ),
            Some(_) => {}
        }
    }

    let op_facts: HashSet<&str> = record.oracle_ops.iter().filter_map(|op| op.fact_id.as_deref()).collect();
    for fact in record.fact_schedule.keys() {
        if !op_facts.contains(fact.as_str()) {
            report.warn(
                ViolationCode::ScheduleMismatch,
                Location::default(),
                format!("scheduled fact `{fact}` has no operation"),
            );
        }
    }
    for (k, op) in record.oracle_ops.iter().enumerate() {
        let scheduled = op.fact_id.as_ref().and_then(|f| record.fact_schedule.get(f));
        if scheduled.is_none() {
            report.warn(ViolationCode::ScheduleMismatch, at_op(k), "operation has no scheduled turn".into());
        }
    }

    let turn_tokens: Vec<Vec<String>> = record.turns.iter().map(|t| tokens(&t.text)).collect();
    for (k, op) in record.oracle_ops.iter().enumerate() {
        if op.keywords.is_empty() {
            continue;
        }
        let first_by = |role: Role, keyword: &str| {
            record
                .turns
                .iter()
                .zip(&turn_tokens)
                .position(|(t, toks)| t.role == role && mentions(toks, keyword))
        };
        for keyword in &op.keywords {
            if let Some(a) = first_by(Role::Assistant, keyword) {
                if first_by(Role::User, keyword).is_none_or(|u| a < u) {
                    report.error(
                        ViolationCode::UserFirst,
                        Location { op: Some(k), turn: Some(a), ..Location::default() },
                        format!("assistant mentions `{keyword}` before the user does"),
                    );
                    break;
                }
            }
        }
        let limit = op
            .fact_id
            .as_ref()
            .and_then(|f| record.fact_schedule.get(f))
            .copied()
            .unwrap_or(usize::MAX);
        let introduced = record
            .turns
            .iter()
            .zip(&turn_tokens)
            .take(limit.saturating_add(1))
            .any(|(t, toks)| t.role == Role::User && op.keywords.iter().any(|kw| mentions(toks, kw)));
        if !introduced {
            report.error(
                ViolationCode::FactNotIntroduced,
                at_op(k),
                "no keyword appears in a user turn at or before the scheduled turn".into(),
            );
        }
    }
    report
}

/// Validates a full user bundle: events, session alignment, chronology and
/// each session against the replayed state before it.
pub fn validate_user(bundle: &UserBundle, cfg: &SynthesisConfig) -> ValidationReport {
    let mut report = validate_events(&bundle.profile, &bundle.events, cfg);
    if bundle.sessions.len() != bundle.events.len() {
        report.error(
            ViolationCode::SessionEventMismatch,
            Location::default(),
            format!("{} sessions for {} events", bundle.sessions.len(), bundle.events.len()),
        );
    }
    for (i, pair) in bundle.sessions.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            report.error(
                ViolationCode::SessionOrder,
                Location { session: Some(i + 1), ..Location::default() },
                "session is earlier than its predecessor".into(),
            );
        }
    }

    let mut ids = SequentialIds::after(&bundle.initial_state);
    let mut state = bundle.initial_state.clone();
    for (i, session) in bundle.sessions.iter().enumerate() {
        report.extend(validate_session(session, &state, cfg).tag_session(i));
        // A failing session leaves the state as it was; later sessions are
        // still checked against the last good state.
        if let Ok(next) = replay_session(&state, session, i, &mut ids) {
            state = next;
        }
    }
    match &bundle.user_id {
        Some(user) => report.tag_user(user),
        None => report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::schema::{OracleOp, StateDelta, Turn};
    use chrono::NaiveDate;

    fn profile() -> PersonaProfile {
        PersonaProfile { seed: "a runner".into(), static_traits: vec!["born 1990".into()], dynamic_facts: vec![] }
    }

    fn event(index: usize, date: &str, deltas: Vec<StateDelta>) -> EventRecord {
        EventRecord {
            index,
            date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            domain: "work".into(),
            summary: "something happened".into(),
            deltas,
        }
    }

    fn delta(op: &str, prior: Option<&str>, new: &str) -> StateDelta {
        StateDelta {
            track: "career".into(),
            operator: op.into(),
            prior_state: prior.map(str::to_owned),
            new_state: new.into(),
        }
    }

    fn small_cfg() -> SynthesisConfig {
        SynthesisConfig { n_events: 2, domains: vec!["work".into()], ..SynthesisConfig::default() }
    }

    #[test]
    fn empty_event_list_counts() {
        let report = validate_events(&profile(), &[], &SynthesisConfig::default());
        assert_eq!(report.codes(), [ViolationCode::EventCount]);
        assert_eq!(report.violations[0].message, "count 0 ≠ 25");
    }

    #[test]
    fn preservation_byte_exact() {
        let events = vec![
            event(0, "2021-01-01", vec![delta("new", None, "Junior analyst at Acme")]),
            event(1, "2022-06-01", vec![delta("adjust", Some("Junior analyst at Acme."), "Senior analyst at Acme")]),
        ];
        let report = validate_events(&profile(), &events, &small_cfg());
        assert_eq!(report.codes(), [ViolationCode::PreservationInvariant]);
        assert_eq!(report.violations[0].location.event, Some(1));
    }

    #[test]
    fn well_formed_events_pass() {
        let events = vec![
            event(0, "2021-01-01", vec![delta("new", None, "Junior analyst at Acme")]),
            event(1, "2022-06-01", vec![delta("adjust", Some("Junior analyst at Acme"), "Senior analyst at Acme")]),
        ];
        assert!(validate_events(&profile(), &events, &small_cfg()).violations.is_empty());
        assert_eq!(simulate_tracks(&events)["career"], "Senior analyst at Acme");
    }

    #[test]
    fn date_and_vocabulary_checks() {
        let events = vec![
            event(0, "2022-01-01", vec![delta("rewrite", None, "x")]),
            event(1, "2021-06-01", vec![delta("expand", None, "y")]),
        ];
        let codes = validate_events(&profile(), &events, &small_cfg()).codes();
        assert!(codes.contains(&ViolationCode::DateOrder));
        assert!(codes.contains(&ViolationCode::UnknownOperator));
        assert!(codes.contains(&ViolationCode::MissingPriorState));
        assert!(codes.contains(&ViolationCode::DateSpan));
    }

    fn turn(role: Role, text: &str) -> Turn {
        Turn { role, text: text.into() }
    }

    fn session_cfg() -> SynthesisConfig {
        SynthesisConfig { turns: [2, 10], adds_per_session: [1, 3], ..SynthesisConfig::default() }
    }

    #[test]
    fn update_prior_must_exist() {
        let record = SessionRecord {
            session_id: "s".into(),
            timestamp: 0,
            turns: vec![turn(Role::User, "I now drink coffee every morning"), turn(Role::Assistant, "ok")],
            oracle_ops: vec![OracleOp {
                fact_id: Some("f1".into()),
                ..OracleOp::update("User drinks tea", "User drinks coffee every single morning", &["coffee"])
            }],
            fact_schedule: [("f1".to_string(), 0)].into(),
        };
        let codes = validate_session(&record, &MemoryState::new(), &session_cfg()).codes();
        assert!(codes.contains(&ViolationCode::UpdateTargetMissing));
        assert!(!codes.contains(&ViolationCode::UserFirst));
    }

    #[test]
    fn assistant_may_not_introduce_keywords() {
        let record = SessionRecord {
            session_id: "s".into(),
            timestamp: 0,
            turns: vec![
                turn(Role::User, "Hi there"),
                turn(Role::Assistant, "How is the marathon training going?"),
                turn(Role::User, "Fine"),
                turn(Role::Assistant, "Great"),
                turn(Role::User, "I signed up for the marathon in Boston"),
                turn(Role::Assistant, "Good luck"),
            ],
            oracle_ops: vec![OracleOp {
                fact_id: Some("f1".into()),
                ..OracleOp::add("User signed up for the Boston marathon", &["marathon", "boston"])
            }],
            fact_schedule: [("f1".to_string(), 4)].into(),
        };
        let report = validate_session(&record, &MemoryState::new(), &session_cfg());
        assert_eq!(report.codes(), [ViolationCode::UserFirst]);
        assert_eq!(report.violations[0].location.turn, Some(1));
    }

    #[test]
    fn many_adds_only_warn() {
        let ops: Vec<OracleOp> = (0..12)
            .map(|i| OracleOp { fact_id: Some(format!("f{i}")), ..OracleOp::add(&format!("User owns {i} plants at home"), &[]) })
            .collect();
        let record = SessionRecord {
            session_id: "s".into(),
            timestamp: 0,
            turns: vec![turn(Role::User, "I own plants"), turn(Role::Assistant, "Nice")],
            fact_schedule: (0..12).map(|i| (format!("f{i}"), 0)).collect(),
            oracle_ops: ops,
        };
        let report = validate_session(&record, &MemoryState::new(), &SynthesisConfig { turns: [2, 10], ..Default::default() });
        assert!(report.is_ok());
        assert_eq!(report.codes(), [ViolationCode::AddCount]);
    }

    #[test]
    fn schedule_must_point_at_user_turns() {
        let record = SessionRecord {
            session_id: "s".into(),
            timestamp: 0,
            turns: vec![turn(Role::User, "I like tea"), turn(Role::Assistant, "tea is nice")],
            oracle_ops: vec![OracleOp { fact_id: Some("f1".into()), ..OracleOp::add("User likes tea a lot", &[]) }],
            fact_schedule: [("f1".to_string(), 1), ("f2".to_string(), 9)].into(),
        };
        let codes = validate_session(&record, &MemoryState::new(), &session_cfg()).codes();
        assert!(codes.contains(&ViolationCode::ScheduleNotUserTurn));
        assert!(codes.contains(&ViolationCode::ScheduleOutOfRange));
        assert!(codes.contains(&ViolationCode::ScheduleMismatch));
    }
}
