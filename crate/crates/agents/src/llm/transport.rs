//! Chat-completion transports: live HTTP, file replay/recording, and in-memory fakes.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

/// Stable identity of a request: SHA-256 of its compact JSON encoding.
pub fn request_key(req: &ChatRequest) -> String {
    let json = serde_json::to_string(req).expect("request serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("http: {0}")]
    Http(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no recorded response for request {0}")]
    MissingRecording(String),
    #[error("io: {0}")]
    Io(String),
    #[error("scripted responses exhausted")]
    Exhausted,
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

pub trait Transport: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError>;
}

/// OpenAI-compatible `POST {base}/chat/completions`.
pub struct HttpTransport {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub const ENV_URL: &str = "SCSIM_LLM_URL";
pub const ENV_MODEL: &str = "SCSIM_LLM_MODEL";
pub const ENV_KEY: &str = "SCSIM_LLM_KEY";

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    pub fn from_env() -> Result<Self, TransportError> {
        let url = std::env::var(ENV_URL).map_err(|_| TransportError::MissingEnv(ENV_URL))?;
        let key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(url, key, Duration::from_secs(120)))
    }
}

impl Transport for HttpTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let mut call = self.agent.post(format!("{}/chat/completions", self.base_url));
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call.send_json(req).map_err(|e| TransportError::Http(e.to_string()))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::BadResponse(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| TransportError::BadResponse(body.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
}

fn exchange_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

/// Answers from a directory of recorded exchanges, one `<key>.json` per request.
pub struct ReplayTransport {
    dir: PathBuf,
}

impl ReplayTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let key = request_key(req);
        let path = exchange_path(&self.dir, &key);
        let text = fs::read_to_string(&path).map_err(|_| TransportError::MissingRecording(key.clone()))?;
        let ex: Exchange = serde_json::from_str(&text).map_err(|e| TransportError::Io(format!("{}: {e}", path.display())))?;
        Ok(ex.response)
    }
}

/// Forwards to `inner` and writes every exchange into `dir`.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Result<Self, TransportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(Self { inner, dir })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let response = self.inner.complete(req)?;
        let key = request_key(req);
        let ex = Exchange {
            key: key.clone(),
            request: req.clone(),
            response: response.clone(),
        };
        let json = serde_json::to_string_pretty(&ex).expect("exchange serializes");
        fs::write(exchange_path(&self.dir, &key), json + "\n").map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(response)
    }
}

/// Returns queued responses in order and keeps every request it saw.
#[derive(Default)]
pub struct CannedTransport {
    responses: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl CannedTransport {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("poisoned").clone()
    }
}

impl Transport for CannedTransport {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        self.seen.lock().expect("poisoned").push(req.clone());
        self.responses.lock().expect("poisoned").pop_front().ok_or(TransportError::Exhausted)
    }
}

/// Computes each response from the request.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        (self.0)(req)
    }
}
