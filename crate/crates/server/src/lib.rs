//! HTTP/JSON front end for the engine.
//!
//! Stateless routes wrap the pure operations (reward, GRPO math, transcript
//! parsing, corpus validation, replay, split, scripted ingest). The
//! `/v1/banks` routes keep named memory banks in process, each with its own
//! vector index, behind a reader-writer lock.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use deltamem_core::agent::{parse_transcript, ChatClient, OracleClient};
use deltamem_core::api::*;
use deltamem_core::grpo::{group_advantages, grpo_objective};
use deltamem_core::memory::{
    apply_operations, fingerprint_hex, state_fingerprint, MemoryState, SequentialIds,
};
use deltamem_core::pipeline::run_corpus;
use deltamem_core::retrieval::{Embedder, HashedEmbedder, VectorIndex};
use deltamem_core::reward::{score_request, RewardRequest};
use deltamem_core::synth::{replay_targets, split_corpus, validate_user, Corpus, CorpusManifest, UserBundle};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;

/// An error response: status plus an [`ApiError`] body.
#[derive(Debug)]
pub struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self(status, ApiError { code: code.into(), message: message.to_string() })
    }

    fn unprocessable(code: &str, message: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// `Json` whose rejections use the service's error body.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = Failure;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(Body(value)),
            Err(rejection) => Err(reject(rejection)),
        }
    }
}

fn reject(rejection: JsonRejection) -> Failure {
    let status = rejection.status();
    let code = if status == StatusCode::UNSUPPORTED_MEDIA_TYPE {
        "unsupported_media_type"
    } else {
        "invalid_body"
    };
    Failure::new(status, code, rejection.body_text())
}

type Reply<T> = Result<Json<T>, Failure>;

struct Bank {
    state: MemoryState,
    index: VectorIndex,
    ids: SequentialIds,
}

#[derive(Default)]
struct Banks {
    next: AtomicU64,
    map: RwLock<HashMap<String, Bank>>,
}

/// Shared service state.
#[derive(Clone, Default)]
pub struct AppState {
    embedder: HashedEmbedder,
    banks: Arc<Banks>,
}

pub fn router() -> Router {
    router_with(AppState::default())
}

pub fn router_with(state: AppState) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/reward", post(reward))
        .route("/v1/reward/batch", post(reward_batch))
        .route("/v1/grpo/advantages", post(advantages))
        .route("/v1/grpo/objective", post(objective))
        .route("/v1/transcript/parse", post(parse))
        .route("/v1/corpus/validate", post(validate))
        .route("/v1/corpus/replay", post(replay))
        .route("/v1/corpus/split", post(split))
        .route("/v1/ingest", post(ingest))
        .route("/v1/banks", post(create_bank))
        .route("/v1/banks/{id}", get(get_bank).delete(delete_bank))
        .route("/v1/banks/{id}/operations", post(apply_to_bank))
        .route("/v1/banks/{id}/search", post(search_bank))
        .with_state(state)
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router()).with_graceful_shutdown(shutdown).await
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, Failure> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn reward(State(app): State<AppState>, Body(req): Body<RewardRequest>) -> Reply<impl Serialize> {
    let embedder = app.embedder;
    blocking(move || {
        score_request(&req, &embedder)
            .map(Json)
            .map_err(|e| Failure::unprocessable("reward_error", e))
    })
    .await
}

async fn reward_batch(
    State(app): State<AppState>,
    Body(reqs): Body<Vec<RewardRequest>>,
) -> Reply<Vec<RewardBatchItem>> {
    let embedder = app.embedder;
    blocking(move || {
        Ok(Json(
            reqs.iter()
                .map(|r| match score_request(r, &embedder) {
                    Ok(b) => BatchItem::Ok(b),
                    Err(e) => BatchItem::Error(ApiError { code: "reward_error".into(), message: e.to_string() }),
                })
                .collect(),
        ))
    })
    .await
}

async fn advantages(Body(req): Body<AdvantagesRequest>) -> Reply<AdvantagesResponse> {
    group_advantages(&req.rewards)
        .map(|advantages| Json(AdvantagesResponse { advantages }))
        .map_err(|e| Failure::unprocessable("grpo_error", e))
}

async fn objective(Body(req): Body<ObjectiveRequest>) -> Reply<ObjectiveResponse> {
    grpo_objective(&req.group, req.eps_clip, req.beta)
        .map(|objective| Json(ObjectiveResponse { objective }))
        .map_err(|e| Failure::unprocessable("grpo_error", e))
}

async fn parse(Body(req): Body<ParseRequest>) -> Reply<ParseResponse> {
    parse_transcript(&req.transcript)
        .map(|trajectory| Json(ParseResponse { trajectory }))
        .map_err(|e| Failure::unprocessable(&format!("parse_error.{}", e.rule), e))
}

fn user_id(user: &UserBundle, i: usize) -> String {
    user.user_id.clone().unwrap_or_else(|| format!("user{}", i + 1))
}

async fn validate(Body(body): Body<CorpusBody>) -> Reply<ValidateResponse> {
    blocking(move || {
        let users: Vec<UserReport> = body
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| UserReport { user_id: user_id(u, i), report: validate_user(u, &body.config) })
            .collect();
        let errors = users.iter().map(|u| u.report.error_count()).sum();
        let warnings = users.iter().map(|u| u.report.warnings().count()).sum();
        Ok(Json(ValidateResponse { ok: errors == 0, errors, warnings, users }))
    })
    .await
}

async fn replay(Body(body): Body<CorpusBody>) -> Reply<ReplayResponse> {
    blocking(move || {
        let users: Vec<UserFingerprints> = body
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| match replay_targets(&u.initial_state, &u.sessions) {
                Ok(states) => UserFingerprints {
                    user_id: user_id(u, i),
                    fingerprints: states.iter().map(|s| fingerprint_hex(state_fingerprint(s))).collect(),
                    error: None,
                },
                Err(e) => UserFingerprints {
                    user_id: user_id(u, i),
                    fingerprints: Vec::new(),
                    error: Some(ApiError { code: "replay_error".into(), message: e.to_string() }),
                },
            })
            .collect();
        Ok(Json(ReplayResponse { ok: users.iter().all(|u| u.error.is_none()), users }))
    })
    .await
}

async fn split(Body(req): Body<SplitRequest>) -> Reply<SplitResponse> {
    split_corpus(&req.manifest, req.ratio, req.seed)
        .map(Json)
        .map_err(|e| Failure::unprocessable("invalid_ratio", e))
}

async fn ingest(State(app): State<AppState>, Body(req): Body<IngestRequest>) -> Reply<IngestResponse> {
    let embedder = app.embedder;
    blocking(move || {
        let users: Vec<UserBundle> = req
            .users
            .into_iter()
            .enumerate()
            .map(|(i, mut u)| {
                u.user_id = Some(user_id(&u, i));
                u
            })
            .collect();
        let corpus = Corpus { manifest: CorpusManifest::default(), users };
        let top_k = req.settings.session.top_k;
        let client = req.client;
        let factory = move |u: &UserBundle| -> Result<Box<dyn ChatClient>, String> {
            match &client {
                ClientSpec::Oracle => Ok(Box::new(OracleClient::new(&u.sessions, top_k))),
                ClientSpec::Scripted { script } => script.client_for(u),
            }
        };
        let (metrics, runs) = run_corpus(&corpus, &factory, &embedder, &req.settings, 1);
        let mut final_states = BTreeMap::new();
        let mut transcripts = BTreeMap::new();
        for run in runs {
            final_states.insert(run.metrics.user_id.clone(), run.final_state);
            transcripts.insert(run.metrics.user_id.clone(), run.transcripts);
        }
        Ok(Json(IngestResponse { metrics, final_states, transcripts }))
    })
    .await
}

fn bank_response(id: &str, bank: &Bank) -> BankResponse {
    BankResponse {
        bank_id: id.to_owned(),
        state: bank.state.clone(),
        fingerprint: fingerprint_hex(state_fingerprint(&bank.state)),
    }
}

fn poisoned<T>(_: T) -> Failure {
    Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "bank registry lock poisoned")
}

async fn create_bank(
    State(app): State<AppState>,
    Body(req): Body<CreateBankRequest>,
) -> Result<(StatusCode, Json<BankResponse>), Failure> {
    let id = format!("b{:06}", app.banks.next.fetch_add(1, Ordering::Relaxed) + 1);
    let mut index = VectorIndex::new(app.embedder.dimension());
    index.sync(&req.initial_state, &app.embedder);
    let bank = Bank { ids: SequentialIds::after(&req.initial_state), state: req.initial_state, index };
    let body = bank_response(&id, &bank);
    app.banks.map.write().map_err(poisoned)?.insert(id, bank);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_bank(State(app): State<AppState>, Path(id): Path<String>) -> Reply<BankResponse> {
    let banks = app.banks.map.read().map_err(poisoned)?;
    let bank = banks.get(&id).ok_or_else(|| Failure::not_found(&format!("bank `{id}`")))?;
    Ok(Json(bank_response(&id, bank)))
}

async fn delete_bank(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    match app.banks.map.write().map_err(poisoned)?.remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(Failure::not_found(&format!("bank `{id}`"))),
    }
}

/// Applies the operations atomically: on any error the bank is unchanged.
async fn apply_to_bank(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<ApplyRequest>,
) -> Reply<BankResponse> {
    let mut banks = app.banks.map.write().map_err(poisoned)?;
    let bank = banks.get_mut(&id).ok_or_else(|| Failure::not_found(&format!("bank `{id}`")))?;
    let mut ids = bank.ids.clone();
    let next = apply_operations(&bank.state, &req.operations, &mut ids)
        .map_err(|e| Failure::unprocessable("memory_error", e))?;
    bank.index.sync(&next, &app.embedder);
    bank.state = next;
    bank.ids = ids;
    Ok(Json(bank_response(&id, bank)))
}

async fn search_bank(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SearchRequest>,
) -> Reply<SearchResponse> {
    if req.top_k == 0 {
        return Err(Failure::unprocessable("invalid_top_k", "top_k must be at least 1"));
    }
    let banks = app.banks.map.read().map_err(poisoned)?;
    let bank = banks.get(&id).ok_or_else(|| Failure::not_found(&format!("bank `{id}`")))?;
    Ok(Json(SearchResponse { hits: bank.index.search(&req.query, req.top_k, &app.embedder) }))
}
