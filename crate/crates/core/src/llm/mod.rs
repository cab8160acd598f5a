//! Chat-completion backends: scripted replay, deterministic rules, and a remote
//! OpenAI-compatible client, plus a recorder that turns any run into a replay fixture.

mod lexicon;
mod record;
mod remote;
mod replay;
mod rule;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::FormatError;

pub use lexicon::{classify_text, Lexicon};
pub use record::{RecordingBackend, SharedBuffer};
pub use remote::{RemoteBackend, RemoteConfig, MAX_RESPONSE_BYTES};
pub use replay::{FixtureEntry, ReplayBackend};
pub use rule::{RuleBackend, UserScript, TAG_ASK_REPAIR, TAG_ASK_SLOT, TAG_CLASSIFY, TAG_COMPLAINT};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 8192;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("replay fixture exhausted for tag `{0}`")]
    ReplayExhausted(String),
    #[error("backend `{backend}` has no handler for tag `{tag}`")]
    UnknownTag { backend: String, tag: String },
    #[error("remote returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("response exceeds {limit} bytes")]
    ResponseTooLarge { limit: usize },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("recording sink: {0}")]
    Sink(#[source] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, content: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, content: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Caller label, e.g. `classify` or `user:ask_slot:noise_level`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => Err(LlmError::InvalidRequest("first message must be the system prompt".into())),
            _ if self.tag.is_empty() => Err(LlmError::InvalidRequest("empty tag".into())),
            _ if !self.temperature.is_finite() || self.temperature < 0.0 => {
                Err(LlmError::InvalidRequest("temperature must be a non-negative number".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    /// SHA-256 over the canonical JSON of the request (tag excluded).
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            messages: &'a [ChatMessage],
            temperature: f64,
            max_tokens: u32,
        }
        let canon = Canon { messages: &self.messages, temperature: self.temperature, max_tokens: self.max_tokens };
        hex::encode(Sha256::digest(crate::json::to_vec(&canon)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub backend: String,
}

impl ChatResponse {
    pub fn stop(text: impl Into<String>, backend: &str) -> Self {
        Self { text: text.into(), finish_reason: FinishReason::Stop, latency_ms: 0, backend: backend.to_string() }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}
