use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use narrativeplay::progression::EngineError;
use narrativeplay::provider::ProviderError;
use serde::{Deserialize, Serialize};

use crate::store::StoreError;

/// Stable, machine-readable error codes.
pub mod codes {
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const EMPTY_BODY: &str = "EMPTY_BODY";
    pub const BODY_TOO_LARGE: &str = "BODY_TOO_LARGE";
    pub const NARRATIVE_NOT_FOUND: &str = "NARRATIVE_NOT_FOUND";
    pub const NARRATIVE_NOT_READY: &str = "NARRATIVE_NOT_READY";
    pub const NARRATIVE_FAILED: &str = "NARRATIVE_FAILED";
    pub const SESSION_NOT_FOUND: &str = "SESSION_NOT_FOUND";
    pub const SESSION_EXISTS: &str = "SESSION_EXISTS";
    pub const SESSION_LOCKED: &str = "SESSION_LOCKED";
    pub const MIGRATION_REQUIRED: &str = "MIGRATION_REQUIRED";
    pub const ASSET_NOT_FOUND: &str = "ASSET_NOT_FOUND";
    pub const NOT_PLAYABLE: &str = "NOT_PLAYABLE";
    pub const PHASE_VIOLATION: &str = "PHASE_VIOLATION";
    pub const NOT_VISIBLE: &str = "NOT_VISIBLE";
    pub const WRONG_PARTNER: &str = "WRONG_PARTNER";
    pub const EMPTY_INPUT: &str = "EMPTY_INPUT";
    pub const NO_EVENTS: &str = "NO_EVENTS";
    pub const PROVIDER_UNAVAILABLE: &str = "PROVIDER_UNAVAILABLE";
    pub const PROVIDER_ERROR: &str = "PROVIDER_ERROR";
    pub const MEDIA_ERROR: &str = "MEDIA_ERROR";
    pub const INTERNAL: &str = "INTERNAL";
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

/// Wire form: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, codes::BAD_REQUEST, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, codes::INTERNAL, message)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message.clone(),
            },
        }
    }
}

impl From<&ProviderError> for ApiError {
    fn from(e: &ProviderError) -> Self {
        match e {
            ProviderError::Unavailable { .. } | ProviderError::Transport(_) => {
                Self::new(503, codes::PROVIDER_UNAVAILABLE, e.to_string())
            }
            _ => Self::new(502, codes::PROVIDER_ERROR, e.to_string()),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        if let Some(p) = e.provider() {
            return p.into();
        }
        let message = e.to_string();
        match e {
            EngineError::NoEvents => Self::new(422, codes::NO_EVENTS, message),
            EngineError::NotPlayable(_) => Self::new(422, codes::NOT_PLAYABLE, message),
            EngineError::PhaseViolation { .. } => Self::new(409, codes::PHASE_VIOLATION, message),
            EngineError::NotVisible(_) => Self::new(409, codes::NOT_VISIBLE, message),
            EngineError::WrongPartner { .. } => Self::new(409, codes::WRONG_PARTNER, message),
            EngineError::EmptyInput => Self::new(400, codes::EMPTY_INPUT, message),
            EngineError::InvalidState(_) => Self::new(423, codes::SESSION_LOCKED, message),
            EngineError::Memory(_) | EngineError::Provider(_) => Self::internal(message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::MigrationRequired { .. } => Self::new(409, codes::MIGRATION_REQUIRED, e.to_string()),
            StoreError::Corrupt { .. } => Self::new(423, codes::SESSION_LOCKED, e.to_string()),
            StoreError::Io { .. } => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}
