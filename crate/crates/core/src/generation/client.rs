use std::collections::HashMap;
use std::env;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::GenerationError;
use crate::jsonl;
use crate::types::SessionRef;

/// One sampled completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub session_ref: SessionRef,
    pub request_index: usize,
    /// 0 for the first attempt of a request.
    pub attempt: u32,
    pub seed: i64,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("no fixture output for {session} request {request_index}")]
    FixtureMiss { session: SessionRef, request_index: usize },
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("client configuration: {0}")]
    Config(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            ClientError::Transport(_) => true,
            _ => false,
        }
    }
}

/// A black-box text generator. Implementations must tolerate concurrent calls.
pub trait GenerationClient: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ClientError>;
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub session_id: String,
    pub turn_index: u32,
    pub request_index: usize,
    pub raw_text: String,
}

/// Replays stored outputs keyed by session and request index. Every attempt
/// of a request gets the same stored text.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    outputs: HashMap<(SessionRef, usize), String>,
}

impl FixtureClient {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Result<Self, GenerationError> {
        let mut outputs = HashMap::new();
        for r in records {
            let key = (SessionRef::new(r.session_id, r.turn_index), r.request_index);
            if outputs.contains_key(&key) {
                return Err(GenerationError::Config(format!("duplicate fixture for {} request {}", key.0, key.1)));
            }
            outputs.insert(key, r.raw_text);
        }
        Ok(Self { outputs })
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        Self::from_records(jsonl::read_jsonl::<FixtureRecord>(path)?)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

impl GenerationClient for FixtureClient {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        self.outputs.get(&(request.session_ref.clone(), request.request_index)).cloned().ok_or_else(|| {
            ClientError::FixtureMiss { session: request.session_ref.clone(), request_index: request.request_index }
        })
    }
}

/// Client for a chat-completions style JSON endpoint.
pub struct HttpClient {
    url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpClient {
    /// `endpoint` is either the full `.../chat/completions` URL or its base.
    pub fn new(endpoint: &str, api_key: Option<String>, model: &str, timeout: Duration) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_owned()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { url, api_key, model: model.to_owned(), agent }
    }

    /// Reads `GENERATION_ENDPOINT`, `GENERATION_API_KEY` and
    /// `GENERATION_MODEL`. Explicit arguments take precedence.
    pub fn from_env(endpoint: Option<&str>, model: Option<&str>, timeout: Duration) -> Result<Self, ClientError> {
        let var = |k: &str| env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = endpoint
            .map(str::to_owned)
            .or_else(|| var("GENERATION_ENDPOINT"))
            .ok_or_else(|| ClientError::Config("GENERATION_ENDPOINT is not set".into()))?;
        let model = model
            .map(str::to_owned)
            .or_else(|| var("GENERATION_MODEL"))
            .ok_or_else(|| ClientError::Config("GENERATION_MODEL is not set".into()))?;
        Ok(Self::new(&endpoint, var("GENERATION_API_KEY"), &model, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl GenerationClient for HttpClient {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(ClientError::Status { status, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(ClientError::Transport(t.to_string())),
        };
        let value: serde_json::Value = resp.into_json().map_err(|e| ClientError::Response(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Response("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(turn: u32, idx: usize) -> GenerationRequest {
        GenerationRequest {
            session_ref: SessionRef::new("s1", turn),
            request_index: idx,
            attempt: 0,
            seed: 0,
            prompt: String::new(),
            temperature: 0.7,
            max_tokens: 16,
        }
    }

    fn fixture() -> FixtureClient {
        FixtureClient::from_records([FixtureRecord {
            session_id: "s1".into(),
            turn_index: 2,
            request_index: 0,
            raw_text: "rewritten as: x\nResponse: y  \n".into(),
        }])
        .unwrap()
    }

    #[test]
    fn fixture_returns_stored_text_byte_identical() {
        assert_eq!(fixture().complete(&request(2, 0)).unwrap(), "rewritten as: x\nResponse: y  \n");
    }

    #[test]
    fn fixture_miss_names_the_key() {
        let err = fixture().complete(&request(2, 5)).unwrap_err();
        assert_eq!(err, ClientError::FixtureMiss { session: SessionRef::new("s1", 2), request_index: 5 });
        assert!(err.to_string().contains("s1#2") && err.to_string().contains('5'));
        assert!(!err.is_retryable());
    }

    #[test]
    fn duplicate_fixture_keys_are_rejected() {
        let r = FixtureRecord { session_id: "a".into(), turn_index: 1, request_index: 0, raw_text: "x".into() };
        assert!(FixtureClient::from_records([r.clone(), r]).is_err());
    }

    #[test]
    fn endpoint_normalization() {
        let t = Duration::from_secs(1);
        assert_eq!(HttpClient::new("http://h/v1", None, "m", t).url(), "http://h/v1/chat/completions");
        assert_eq!(
            HttpClient::new("http://h/v1/chat/completions/", None, "m", t).url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn retryable_statuses() {
        let s = |status| ClientError::Status { status, body: String::new() };
        assert!(s(429).is_retryable());
        assert!(s(503).is_retryable());
        assert!(!s(400).is_retryable());
        assert!(ClientError::Transport("reset".into()).is_retryable());
    }
}
