//! LLM access behind a single client with live, record and replay modes.
//!
//! Replay mode answers from a [`ReplayStore`] keyed by a request
//! fingerprint and never touches the transport, so the whole engine can be
//! exercised offline and deterministically.
//!
//! # Fingerprint
//!
//! SHA-256 (lowercase hex) of the compact JSON document
//! `{"model_tag": <tag>, "messages": [{"role": <role>, "content": <content>}, ...]}`
//! where every content string is canonicalized first: CRLF and CR become LF,
//! trailing whitespace is stripped from every line, and leading/trailing
//! blank space of the whole string is trimmed. Temperature is not part of the
//! fingerprint.

mod store;
mod transport;
pub mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use store::{ReplayRecord, ReplayStore, RECORD_FILE_NAME};
pub use transport::{ChatRequest, HttpTransport, NoNetwork, Transport, TransportError};

pub const ENV_ENDPOINT: &str = "DYNAVIS_LLM_ENDPOINT";
pub const ENV_KEY: &str = "DYNAVIS_LLM_KEY";
pub const ENV_MODE: &str = "DYNAVIS_LLM_MODE";
pub const ENV_FIXTURE_DIR: &str = "DYNAVIS_FIXTURE_DIR";
pub const ENV_MODEL: &str = "DYNAVIS_LLM_MODEL";

pub const DEFAULT_MODEL_TAG: &str = "gpt-3.5-turbo";
pub const DEFAULT_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<Message>,
    pub model_tag: String,
    pub temperature: f64,
}

impl Conversation {
    pub fn new(model_tag: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            messages: vec![Message {
                role: Role::System,
                content: system.into(),
            }],
            model_tag: model_tag.into(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn push_user(&mut self, content: impl Into<String>) {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
        });
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) {
        self.messages.push(Message {
            role: Role::Assistant,
            content: content.into(),
        });
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// First message is the system prompt, then user/assistant alternate,
    /// ending with a user turn awaiting completion.
    pub fn check_well_formed(&self) -> Result<(), GatewayError> {
        let malformed = |why: &str| Err(GatewayError::Malformed(why.to_string()));
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return malformed("first message must have role system"),
        }
        for (i, m) in self.messages.iter().enumerate().skip(1) {
            let expected = if i % 2 == 1 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return malformed(&format!(
                    "message {i} has role {}, expected {}",
                    m.role.as_str(),
                    expected.as_str()
                ));
            }
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return malformed("conversation must end with a user message");
        }
        Ok(())
    }
}

/// Whitespace canonicalization applied to message content before hashing.
pub fn canonicalize_content(content: &str) -> String {
    let unified = content.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = unified.lines().map(str::trim_end).collect();
    lines.join("\n").trim().to_string()
}

/// Stable request fingerprint; see the module docs for the algorithm.
pub fn fingerprint(conv: &Conversation) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model_tag: &'a str,
        messages: Vec<CanonicalMessage>,
    }
    #[derive(Serialize)]
    struct CanonicalMessage {
        role: &'static str,
        content: String,
    }
    let doc = Canonical {
        model_tag: &conv.model_tag,
        messages: conv
            .messages
            .iter()
            .map(|m| CanonicalMessage {
                role: m.role.as_str(),
                content: canonicalize_content(&m.content),
            })
            .collect(),
    };
    let bytes = serde_json::to_vec(&doc).expect("canonical form serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("malformed conversation: {0}")]
    Malformed(String),
    #[error("LLM transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("replay miss: no recorded response for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("fixture drift: fingerprint {fingerprint} is already recorded with different content")]
    Drift { fingerprint: String },
    #[error("replay store I/O error at {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(GatewayError::Config(format!(
                "{ENV_MODE} must be one of live, record, replay (got {other:?})"
            ))),
        }
    }
}

/// The engine's single LLM client. Cheap to share behind an `Arc`.
pub struct LlmGateway {
    mode: GatewayMode,
    model_tag: String,
    transport: Arc<dyn Transport>,
    store: Arc<ReplayStore>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("mode", &self.mode)
            .field("model_tag", &self.model_tag)
            .field("recorded", &self.store.len())
            .finish()
    }
}

impl LlmGateway {
    pub fn new(mode: GatewayMode, transport: Arc<dyn Transport>, store: Arc<ReplayStore>) -> Self {
        Self {
            mode,
            model_tag: DEFAULT_MODEL_TAG.to_string(),
            transport,
            store,
        }
    }

    /// Replay-only gateway; the transport panics if ever reached.
    pub fn replay(store: Arc<ReplayStore>) -> Self {
        Self::new(GatewayMode::Replay, Arc::new(NoNetwork), store)
    }

    pub fn with_model_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }

    /// Builds a gateway from `DYNAVIS_LLM_*` environment variables. Mode
    /// defaults to replay.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mode: GatewayMode = std::env::var(ENV_MODE)
            .ok()
            .map(|m| m.parse())
            .transpose()?
            .unwrap_or(GatewayMode::Replay);
        let store = match std::env::var_os(ENV_FIXTURE_DIR) {
            Some(dir) => ReplayStore::open_dir(PathBuf::from(dir))?,
            None if mode == GatewayMode::Live => ReplayStore::in_memory(),
            None => {
                return Err(GatewayError::Config(format!(
                    "{ENV_FIXTURE_DIR} is required in {mode:?} mode"
                )))
            }
        };
        let transport: Arc<dyn Transport> = match mode {
            GatewayMode::Replay => Arc::new(NoNetwork),
            _ => {
                let endpoint = std::env::var(ENV_ENDPOINT)
                    .map_err(|_| GatewayError::Config(format!("{ENV_ENDPOINT} is not set")))?;
                Arc::new(HttpTransport::new(endpoint, std::env::var(ENV_KEY).ok()))
            }
        };
        let mut gw = Self::new(mode, transport, Arc::new(store));
        if let Ok(tag) = std::env::var(ENV_MODEL) {
            gw.model_tag = tag;
        }
        Ok(gw)
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn store(&self) -> &Arc<ReplayStore> {
        &self.store
    }

    /// Starts a conversation tagged with this gateway's model.
    pub fn conversation(&self, system: impl Into<String>) -> Conversation {
        Conversation::new(self.model_tag.clone(), system)
    }

    /// Sends the conversation and returns the assistant's content.
    pub fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        conv.check_well_formed()?;
        let fp = fingerprint(conv);
        match self.mode {
            GatewayMode::Replay => {
                self.store.get(&fp).ok_or(GatewayError::ReplayMiss { fingerprint: fp })
            }
            GatewayMode::Live => Ok(self.transport.complete(&ChatRequest::from(conv))?),
            GatewayMode::Record => {
                let content = self.transport.complete(&ChatRequest::from(conv))?;
                self.store.record(&fp, &content)?;
                Ok(content)
            }
        }
    }
}
