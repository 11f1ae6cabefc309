//! Service errors and their JSON error body.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dynavis_core::analysis::Finding;
use dynavis_core::chart::{ChartError, ValidationReport};
use dynavis_core::data::DataError;
use dynavis_core::gateway::GatewayError;
use dynavis_core::widget::RegistryError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    InvalidRequest,
    ParseError,
    NotFound,
    NoChart,
    ValidationFailed,
    SynthesisFailed,
    ReplayMiss,
    FixtureDrift,
    LlmError,
    Storage,
    Internal,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::InvalidRequest => "invalid_request",
            ErrorKind::ParseError => "parse_error",
            ErrorKind::NotFound => "not_found",
            ErrorKind::NoChart => "no_chart",
            ErrorKind::ValidationFailed => "validation_failed",
            ErrorKind::SynthesisFailed => "synthesis_failed",
            ErrorKind::ReplayMiss => "replay_miss",
            ErrorKind::FixtureDrift => "fixture_drift",
            ErrorKind::LlmError => "llm_error",
            ErrorKind::Storage => "storage",
            ErrorKind::Internal => "internal",
        }
    }

    pub fn status(self) -> StatusCode {
        match self {
            ErrorKind::InvalidRequest | ErrorKind::ParseError => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::NoChart => StatusCode::CONFLICT,
            ErrorKind::ValidationFailed | ErrorKind::SynthesisFailed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::LlmError => StatusCode::BAD_GATEWAY,
            ErrorKind::ReplayMiss => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::FixtureDrift | ErrorKind::Storage | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body: `{error_kind, message, detail_path?}` plus, for synthesis
/// failures, the findings and a link to the logged transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{}: {message}", error_kind.as_str())]
pub struct ServiceError {
    pub error_kind: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transcript_ref: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub findings: Vec<Finding>,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            error_kind: kind,
            message: message.into(),
            detail_path: None,
            transcript_ref: None,
            findings: Vec::new(),
        }
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.detail_path = Some(path.into());
        self
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::InvalidRequest, message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(ErrorKind::NotFound, format!("{what} not found"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }

    /// Fingerprint named by a replay-miss error.
    pub fn missing_fingerprint(&self) -> Option<&str> {
        if self.error_kind != ErrorKind::ReplayMiss {
            return None;
        }
        self.message.rsplit(' ').next()
    }

    /// First validation error's path becomes the detail path.
    pub fn validation(what: &str, report: &ValidationReport) -> Self {
        let err = Self::new(ErrorKind::ValidationFailed, format!("{what}:\n{}", report.describe()));
        match report.errors.first() {
            Some(e) => err.at(e.path.clone()),
            None => err,
        }
    }
}

impl From<GatewayError> for ServiceError {
    fn from(e: GatewayError) -> Self {
        let kind = match &e {
            GatewayError::ReplayMiss { .. } => ErrorKind::ReplayMiss,
            GatewayError::Drift { .. } => ErrorKind::FixtureDrift,
            GatewayError::Transport(_) => ErrorKind::LlmError,
            GatewayError::Store { .. } => ErrorKind::Storage,
            GatewayError::Malformed(_) | GatewayError::Config(_) => ErrorKind::Internal,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<DataError> for ServiceError {
    fn from(e: DataError) -> Self {
        let path = match &e {
            DataError::RowLength { row, .. } => Some(format!("/rows/{row}")),
            DataError::CellType { row, column, .. } => Some(format!("/rows/{row}/{}", escape(column))),
            DataError::Csv { line, .. } => Some(format!("/lines/{line}")),
            DataError::Json { path, .. } => Some(path.clone()),
            DataError::DuplicateColumn(name) => Some(format!("/columns/{}", escape(name))),
            DataError::Empty | DataError::NoColumns => None,
        };
        let err = Self::new(ErrorKind::ParseError, e.to_string());
        match path {
            Some(p) => err.at(p),
            None => err,
        }
    }
}

impl From<ChartError> for ServiceError {
    fn from(e: ChartError) -> Self {
        match e {
            ChartError::MalformedData { path, message } => Self::new(ErrorKind::ParseError, message).at(path),
            other => Self::invalid(other.to_string()),
        }
    }
}

impl From<RegistryError> for ServiceError {
    fn from(e: RegistryError) -> Self {
        match &e {
            RegistryError::UnknownWidget(id) => Self::not_found(format!("widget {id:?}")),
            RegistryError::DuplicateId(_) => Self::internal(e.to_string()),
            RegistryError::NotTransformWidget(_) => Self::invalid(e.to_string()),
            RegistryError::InvalidTransform { index, .. } => {
                Self::new(ErrorKind::ValidationFailed, e.to_string()).at(format!("/transforms/{index}"))
            }
            RegistryError::BaseTransformNotArray => Self::new(ErrorKind::ValidationFailed, e.to_string()).at("/transform"),
            RegistryError::InvalidEffectiveSpec { report } => Self::validation("effective spec fails validation", report),
        }
    }
}

fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.error_kind.status(), Json(self)).into_response()
    }
}
