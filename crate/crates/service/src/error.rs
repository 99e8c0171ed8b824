use std::fmt;

use serde::{Deserialize, Serialize};

use tomb_core::engine::EngineError;
use tomb_core::error::Coded;
use tomb_core::format::FormatError;
use tomb_core::model::ModelError;
use tomb_core::prompt::PromptError;
use tomb_core::prose::ProseError;
use tomb_core::provider::ProviderError;
use tomb_core::store::StoreError;
use tomb_core::{Finding, ValidationReport};

/// Error as carried in response bodies: `{"error": {"code", "message"}}`,
/// plus `findings` for invariant violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<Vec<Finding>>,
}

impl ApiError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            findings: None,
        }
    }

    pub fn invalid(report: ValidationReport) -> Self {
        Self {
            code: "INVARIANT_VIOLATION".into(),
            message: format!("instrument violates invariants:\n{report}"),
            findings: Some(report.findings),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BAD_REQUEST", message)
    }

    /// HTTP status for this error's code.
    pub fn status(&self) -> u16 {
        status_for(&self.code)
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

/// The code → status table documented in `API.md`.
pub fn status_for(code: &str) -> u16 {
    match code {
        "BAD_REQUEST" | "UNKNOWN_ACTION" => 400,
        "PROJECT_NOT_FOUND" | "UNKNOWN_SCENE" | "UNKNOWN_CHARACTER" | "UNKNOWN_BEAT" | "UNKNOWN_REQUEST"
        | "NOT_FOUND" => 404,
        "DRAFT_ALREADY_PENDING" | "NO_PENDING_DRAFT" | "STALE_CHAIN" | "UPSTREAM_STALE" | "NOTHING_TO_RECOMPUTE"
        | "PARTICIPANT_IN_USE" | "DUPLICATE_NAME" | "NO_DOCUMENT" | "MISSING_PROSE" | "EMPTY_SCENE" => 409,
        "AUTH_FAILED" | "RATE_LIMITED" | "TIMEOUT" | "SERVER_ERROR" | "REQUEST_REJECTED" | "MALFORMED_RESPONSE"
        | "CONTENT_FILTERED" | "EMPTY_GENERATION" | "TRANSPORT_ERROR" | "SCRIPT_EXHAUSTED" => 502,
        "PROVIDER_UNAVAILABLE" | "CANCELLED" => 503,
        "STORAGE_FAILURE" | "INVARIANT_VIOLATION" | "MALFORMED_DOCUMENT" | "SCHEMA_VERSION_TOO_NEW" | "INTERNAL" => 500,
        _ => 422,
    }
}

macro_rules! coded_into_api {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::new(e.code(), e.to_string())
            }
        }
    )*};
}

coded_into_api!(EngineError, ModelError, PromptError, ProseError, ProviderError);

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::InvariantViolation(report) => ApiError::invalid(report),
            other => ApiError::new(other.code(), other.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Format(f) => f.into(),
            other => ApiError::new(other.code(), other.to_string()),
        }
    }
}
