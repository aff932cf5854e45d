//! Corpus-level runs: ingest every user, score each session against the
//! replayed target states, and aggregate metrics.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::client::{ChatClient, ScriptedClient};
use crate::agent::runtime::{ingest_user, qpm_from_counts, Qpm, SessionConfig, SessionError};
use crate::memory::{fingerprint_hex, state_fingerprint, MemoryState};
use crate::retrieval::Embedder;
use crate::reward::{score_request, RewardError, RewardRequest, RewardWeights, DEFAULT_TAU};
use crate::synth::corpus::Corpus;
use crate::synth::replay::{replay_targets, ReplayError};
use crate::synth::schema::UserBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub tau: f64,
    pub use_fidelity: bool,
    pub weights: RewardWeights,
    pub session: SessionConfig,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            use_fidelity: true,
            weights: RewardWeights::default(),
            session: SessionConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub r_format: f64,
    pub r_retrieval: f64,
    pub r_trans: f64,
    pub r_total: f64,
    pub queries: usize,
    pub writes: usize,
    pub fingerprint: String,
    pub target_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SessionError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub sessions: Vec<SessionMetrics>,
    pub queries: usize,
    pub writes: usize,
    pub qpm: Qpm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMetrics {
    pub seed: u64,
    pub settings: RunSettings,
    pub users: Vec<UserMetrics>,
    /// Mean r_trans over users at each session index.
    pub mean_r_trans_by_session: Vec<f64>,
    pub mean_r_trans: f64,
    pub mean_r_total: f64,
    pub queries: usize,
    pub writes: usize,
    pub qpm: Qpm,
}

/// Everything produced for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRun {
    pub metrics: UserMetrics,
    pub final_state: MemoryState,
    pub transcripts: Vec<String>,
}

#[derive(Debug, Error)]
pub enum UserRunError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("{0}")]
    Other(String),
}

fn failed_user(user: &UserBundle, user_id: &str, error: String) -> UserRun {
    UserRun {
        metrics: UserMetrics {
            user_id: user_id.to_owned(),
            sessions: Vec::new(),
            queries: 0,
            writes: 0,
            qpm: qpm_from_counts(0, 0),
            error: Some(error),
        },
        final_state: user.initial_state.clone(),
        transcripts: Vec::new(),
    }
}

fn try_run_user(
    user: &UserBundle,
    user_id: &str,
    client: &mut dyn ChatClient,
    embedder: &dyn Embedder,
    settings: &RunSettings,
) -> Result<UserRun, UserRunError> {
    let targets = replay_targets(&user.initial_state, &user.sessions)?;
    let ingest = ingest_user(&user.initial_state, &user.sessions, client, embedder, &settings.session)
        .map_err(|e| UserRunError::Other(e.to_string()))?;

    let mut sessions = Vec::with_capacity(user.sessions.len());
    let mut transcripts = Vec::with_capacity(user.sessions.len());
    for ((record, outcome), target) in user.sessions.iter().zip(&ingest.sessions).zip(&targets) {
        let request = RewardRequest {
            pred_state: outcome.state.clone(),
            target_state: target.clone(),
            oracle_ops: record.oracle_ops.clone(),
            transcript: outcome.transcript.clone(),
            tau: settings.tau,
            use_fidelity: settings.use_fidelity,
            weights: settings.weights,
        };
        let breakdown = score_request(&request, embedder)?;
        let writes = if outcome.error.is_none() { outcome.trajectory.write_count() } else { 0 };
        sessions.push(SessionMetrics {
            session_id: record.session_id.clone(),
            r_format: breakdown.r_format,
            r_retrieval: breakdown.r_retrieval,
            r_trans: breakdown.r_trans,
            r_total: breakdown.r_total,
            queries: outcome.trajectory.query_count,
            writes,
            fingerprint: fingerprint_hex(state_fingerprint(&outcome.state)),
            target_fingerprint: fingerprint_hex(state_fingerprint(target)),
            error: outcome.error.clone(),
        });
        transcripts.push(outcome.transcript.clone());
    }
    let queries = sessions.iter().map(|s| s.queries).sum();
    let writes = sessions.iter().map(|s| s.writes).sum();
    Ok(UserRun {
        metrics: UserMetrics {
            user_id: user_id.to_owned(),
            sessions,
            queries,
            writes,
            qpm: qpm_from_counts(queries, writes),
            error: None,
        },
        final_state: ingest.final_state,
        transcripts,
    })
}

/// Ingests and scores one user. Failures are recorded on the result rather
/// than returned, so a corpus run always continues.
pub fn run_user(
    user: &UserBundle,
    client: &mut dyn ChatClient,
    embedder: &dyn Embedder,
    settings: &RunSettings,
) -> UserRun {
    let user_id = user.user_id.clone().unwrap_or_default();
    try_run_user(user, &user_id, client, embedder, settings)
        .unwrap_or_else(|e| failed_user(user, &user_id, e.to_string()))
}

/// Builds the chat client for one user.
pub type ClientFactory<'a> =
    dyn Fn(&UserBundle) -> Result<Box<dyn ChatClient>, String> + Sync + 'a;

/// Runs every user of `corpus` on up to `jobs` threads. Output order and
/// content do not depend on `jobs`.
pub fn run_corpus(
    corpus: &Corpus,
    make_client: &ClientFactory<'_>,
    embedder: &dyn Embedder,
    settings: &RunSettings,
    jobs: usize,
) -> (IngestMetrics, Vec<UserRun>) {
    let n = corpus.users.len();
    let slots: Vec<Mutex<Option<UserRun>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let work = || loop {
        let i = {
            let mut guard = next.lock().expect("work counter poisoned");
            let i = *guard;
            *guard += 1;
            i
        };
        if i >= n {
            break;
        }
        let user = &corpus.users[i];
        let run = match make_client(user) {
            Ok(mut client) => run_user(user, client.as_mut(), embedder, settings),
            Err(e) => failed_user(user, user.user_id.as_deref().unwrap_or_default(), e),
        };
        *slots[i].lock().expect("result slot poisoned") = Some(run);
    };
    std::thread::scope(|scope| {
        for _ in 1..jobs.clamp(1, n.max(1)) {
            scope.spawn(work);
        }
        work();
    });
    let runs: Vec<UserRun> = slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot poisoned").expect("every user ran"))
        .collect();
    (aggregate(runs.iter().map(|r| &r.metrics), settings), runs)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn aggregate<'a>(
    users: impl Iterator<Item = &'a UserMetrics>,
    settings: &RunSettings,
) -> IngestMetrics {
    let users: Vec<UserMetrics> = users.cloned().collect();
    let mut by_index: Vec<Vec<f64>> = Vec::new();
    let mut all_trans = Vec::new();
    let mut all_total = Vec::new();
    for user in &users {
        for (i, s) in user.sessions.iter().enumerate() {
            if by_index.len() <= i {
                by_index.resize_with(i + 1, Vec::new);
            }
            by_index[i].push(s.r_trans);
            all_trans.push(s.r_trans);
            all_total.push(s.r_total);
        }
    }
    let queries = users.iter().map(|u| u.queries).sum();
    let writes = users.iter().map(|u| u.writes).sum();
    IngestMetrics {
        seed: settings.seed,
        settings: settings.clone(),
        mean_r_trans_by_session: by_index.iter().map(|v| mean(v)).collect(),
        mean_r_trans: mean(&all_trans),
        mean_r_total: mean(&all_total),
        queries,
        writes,
        qpm: qpm_from_counts(queries, writes),
        users,
    }
}

impl IngestMetrics {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("metrics serialize");
        out.push('\n');
        out
    }
}

/// Canned agent replies keyed by user id, one reply per client call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    pub users: BTreeMap<String, Vec<String>>,
}

impl ScriptFile {
    pub fn client_for(&self, user: &UserBundle) -> Result<Box<dyn ChatClient>, String> {
        let id = user.user_id.as_deref().unwrap_or_default();
        self.users
            .get(id)
            .map(|replies| Box::new(ScriptedClient::new(replies.iter().cloned())) as Box<dyn ChatClient>)
            .ok_or_else(|| format!("script has no replies for user `{id}`"))
    }
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("no user `{0}` in corpus")]
    UnknownUser(String),
    #[error("user `{user}` has no session `{session}`")]
    UnknownSession { user: String, session: String },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// A session selector resolves against ids first, then as a 0-based index.
pub fn find_session(user: &UserBundle, selector: &str) -> Option<usize> {
    user.sessions
        .iter()
        .position(|s| s.session_id == selector)
        .or_else(|| selector.parse::<usize>().ok().filter(|&i| i < user.sessions.len()))
}

/// Builds a reward request for a stored prediction of one corpus session:
/// the target is the replayed state after that session.
pub fn reward_request_for(
    corpus: &Corpus,
    user_id: &str,
    session: &str,
    pred_state: MemoryState,
    transcript: String,
    settings: &RunSettings,
) -> Result<RewardRequest, SelectError> {
    let user = corpus
        .users
        .iter()
        .find(|u| u.user_id.as_deref() == Some(user_id))
        .ok_or_else(|| SelectError::UnknownUser(user_id.to_owned()))?;
    let index = find_session(user, session).ok_or_else(|| SelectError::UnknownSession {
        user: user_id.to_owned(),
        session: session.to_owned(),
    })?;
    let targets = replay_targets(&user.initial_state, &user.sessions[..=index])?;
    Ok(RewardRequest {
        pred_state,
        target_state: targets[index].clone(),
        oracle_ops: user.sessions[index].oracle_ops.clone(),
        transcript,
        tau: settings.tau,
        use_fidelity: settings.use_fidelity,
        weights: settings.weights,
    })
}
