//! Thin async client for `deltamem-server`.
//!
//! One method per route. Request and response types come from
//! [`deltamem_core::api`], so both sides share a single schema.

use deltamem_core::api::*;
use deltamem_core::memory::{MemoryOperation, MemoryState};
use deltamem_core::reward::{RewardBreakdown, RewardRequest};
use deltamem_core::synth::CorpusManifest;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    /// The server answered with an error body.
    #[error("{status}: {} ({})", .error.message, .error.code)]
    Api { status: StatusCode, error: ApiError },
    #[error("{status}: unexpected response body: {body}")]
    Unexpected { status: StatusCode, body: String },
}

impl ClientError {
    /// Whether the failure is the caller's fault (a domain rejection) rather
    /// than transport or server trouble.
    pub fn is_rejection(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if status.is_client_error())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_http(base, reqwest::Client::new())
    }

    pub fn with_http(base: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base.into().trim_end_matches('/').to_owned();
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, method: Method, path: &str, body: Option<&impl Serialize>) -> Result<reqwest::Response> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&text) {
            Ok(error) => ClientError::Api { status, error },
            Err(_) => ClientError::Unexpected { status, body: text },
        })
    }

    async fn json<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&impl Serialize>) -> Result<T> {
        Ok(self.send(method, path, body).await?.json().await?)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.json(Method::POST, path, Some(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.json(Method::GET, "/v1/healthz", None::<&()>).await
    }

    pub async fn reward(&self, request: &RewardRequest) -> Result<RewardBreakdown> {
        self.post("/v1/reward", request).await
    }

    pub async fn reward_batch(&self, requests: &[RewardRequest]) -> Result<Vec<RewardBatchItem>> {
        self.post("/v1/reward/batch", &requests).await
    }

    pub async fn advantages(&self, rewards: &[f64]) -> Result<Vec<f64>> {
        let body = AdvantagesRequest { rewards: rewards.to_vec() };
        let resp: AdvantagesResponse = self.post("/v1/grpo/advantages", &body).await?;
        Ok(resp.advantages)
    }

    pub async fn objective(&self, request: &ObjectiveRequest) -> Result<f64> {
        let resp: ObjectiveResponse = self.post("/v1/grpo/objective", request).await?;
        Ok(resp.objective)
    }

    pub async fn parse(&self, transcript: &str) -> Result<ParseResponse> {
        self.post("/v1/transcript/parse", &ParseRequest { transcript: transcript.to_owned() }).await
    }

    pub async fn validate(&self, corpus: &CorpusBody) -> Result<ValidateResponse> {
        self.post("/v1/corpus/validate", corpus).await
    }

    pub async fn replay(&self, corpus: &CorpusBody) -> Result<ReplayResponse> {
        self.post("/v1/corpus/replay", corpus).await
    }

    pub async fn split(&self, manifest: &CorpusManifest, ratio: f64, seed: u64) -> Result<SplitResponse> {
        let body = SplitRequest { manifest: manifest.clone(), ratio, seed };
        self.post("/v1/corpus/split", &body).await
    }

    pub async fn ingest(&self, request: &IngestRequest) -> Result<IngestResponse> {
        self.post("/v1/ingest", request).await
    }

    pub async fn create_bank(&self, initial_state: MemoryState) -> Result<BankResponse> {
        self.post("/v1/banks", &CreateBankRequest { initial_state }).await
    }

    pub async fn bank(&self, id: &str) -> Result<BankResponse> {
        self.json(Method::GET, &format!("/v1/banks/{id}"), None::<&()>).await
    }

    pub async fn delete_bank(&self, id: &str) -> Result<()> {
        self.send(Method::DELETE, &format!("/v1/banks/{id}"), None::<&()>).await?;
        Ok(())
    }

    pub async fn apply(&self, id: &str, operations: Vec<MemoryOperation>) -> Result<BankResponse> {
        self.post(&format!("/v1/banks/{id}/operations"), &ApplyRequest { operations }).await
    }

    pub async fn search(&self, id: &str, query: &str, top_k: usize) -> Result<SearchResponse> {
        let body = SearchRequest { query: query.to_owned(), top_k };
        self.post(&format!("/v1/banks/{id}/search"), &body).await
    }
}
