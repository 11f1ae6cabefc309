use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::Conversation;

/// Chat-completion request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

impl From<&Conversation> for ChatRequest {
    fn from(conv: &Conversation) -> Self {
        Self {
            model: conv.model_tag.clone(),
            temperature: conv.temperature,
            messages: conv
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str().to_string(),
                    content: m.content.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Network(String),
    #[error("provider returned status {status}: {payload}")]
    Status { status: u16, payload: String },
    #[error("unexpected provider payload: {payload}")]
    Payload { payload: String },
    #[error("{0}")]
    Other(String),
}

/// Something that can answer a chat-completion request.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Transport that must never be used. Injected in replay mode so any
/// accidental network path fails loudly.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoNetwork;

impl Transport for NoNetwork {
    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        panic!("network transport used while the gateway is in replay mode");
    }
}

/// Chat-completion over HTTP: POST `{model, temperature, messages}` and read
/// `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub const TIMEOUT: Duration = Duration::from_secs(120);

    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Self::TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(request)
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, payload: body });
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|_| TransportError::Payload { payload: body.clone() })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or(TransportError::Payload { payload: body })
    }
}
