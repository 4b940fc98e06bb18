//! Chat-completion access for every agent role.
//!
//! [`ChatBackend`] is the seam: [`HttpBackend`] speaks the OpenAI-compatible
//! wire shape with retry, [`ScriptedBackend`] replays canned replies from a
//! scenario file so whole runs are reproducible offline.

mod http;
mod scripted;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig, RetryPolicy};
pub use scripted::{ScriptRule, Scenario, ScriptedBackend, ScriptedFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Image attachments as `data:` URLs, sent as multimodal content parts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            images: Vec::new(),
        }
    }
}

/// Routing metadata that never goes on the wire. The scripted backend keys
/// replies on it; the orchestrator fills it per call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub agent: Option<String>,
    pub entry_id: Option<String>,
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub meta: RequestMeta,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return bad("messages is empty");
        }
        match self.messages.iter().find(|m| m.role != Role::System) {
            Some(m) if m.role == Role::User => {}
            Some(_) => return bad("first non-system message must come from the user"),
            None => return bad("request has only system messages"),
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// SHA-256 over roles and contents; stable across processes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(format!("{:?}", m.role).as_bytes());
            h.update([0u8]);
            h.update(m.content.as_bytes());
            for img in &m.images {
                h.update([1u8]);
                h.update(img.as_bytes());
            }
            h.update([0xffu8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected by {backend} (HTTP {status})")]
    Auth { backend: String, status: u16 },
    #[error("{backend}: gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        backend: String,
        attempts: u32,
        last: String,
    },
    #[error("{backend}: HTTP {status}: {body}")]
    Status {
        backend: String,
        status: u16,
        body: String,
    },
    #[error("{backend}: response has no message content")]
    MissingContent { backend: String },
    #[error("{backend}: {message}")]
    Transport { backend: String, message: String },
    #[error("scripted backend {backend}: no rule matches agent={agent:?} turn={turn} digest={digest}")]
    NoScriptedReply {
        backend: String,
        agent: Option<String>,
        turn: u32,
        digest: String,
    },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub backend: String,
    pub agent: Option<String>,
    pub entry_id: Option<String>,
    pub attempt: u32,
    pub request_digest: String,
    pub status: Option<u16>,
    /// Reply content on success, error text otherwise.
    pub outcome: Result<String, String>,
}

/// Append-only, shareable record of every network (or scripted) call.
#[derive(Clone, Default)]
pub struct CallLog {
    inner: Arc<Mutex<Vec<CallLogEntry>>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, entry: CallLogEntry) {
        self.inner
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(entry);
    }

    pub fn entries(&self) -> Vec<CallLogEntry> {
        self.inner
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for CallLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallLog").field("len", &self.len()).finish()
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Model identifier sent in requests built by the orchestrator.
    fn model(&self) -> &str;

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

pub type BackendHandle = Arc<dyn ChatBackend>;

/// Validates the request, dispatches it, and rejects content-less replies.
pub fn complete(backend: &dyn ChatBackend, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    req.validate()?;
    let resp = backend.send(req)?;
    if resp.finish_reason != FinishReason::Error && resp.content.is_empty() {
        return Err(GatewayError::MissingContent {
            backend: backend.name().to_string(),
        });
    }
    Ok(resp)
}
