//! Chat client for OpenAI-compatible `/chat/completions` endpoints.

use deltamem_core::agent::{ChatClient, ChatMessage, ChatRole, ClientError};
use serde::Deserialize;
use serde_json::json;

pub struct EndpointClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

impl EndpointClient {
    /// `base` is the API root; `/chat/completions` is appended unless present.
    pub fn new(base: &str, model: &str, api_key: Option<String>, temperature: f64) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        Self { http: reqwest::blocking::Client::new(), url, model: model.to_owned(), api_key, temperature }
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Reply,
}

#[derive(Deserialize)]
struct Reply {
    content: Option<String>,
}

fn role(r: ChatRole) -> &'static str {
    match r {
        ChatRole::System => "system",
        ChatRole::Assistant => "assistant",
        // Tool output goes back as plain user text; the agent's tool calls
        // are in-band markup, not native function calls.
        ChatRole::User | ChatRole::Tool => "user",
    }
}

impl ChatClient for EndpointClient {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages
                .iter()
                .map(|m| json!({ "role": role(m.role), "content": m.text }))
                .collect::<Vec<_>>(),
        });
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let backend = |e: reqwest::Error| ClientError::Backend(e.to_string());
        let resp = req.send().map_err(backend)?.error_for_status().map_err(backend)?;
        let completion: Completion = resp.json().map_err(backend)?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Backend("completion has no message content".into()))
    }
}
