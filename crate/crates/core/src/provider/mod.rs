//! Completion backends. [`HttpProvider`] talks to any chat-completion
//! endpoint; [`ScriptedProvider`] replays queued responses for tests and
//! offline runs.

mod http;
mod scripted;

pub use http::{Backoff, CancelToken, HttpProvider, ProviderConfig, Sleeper, ThreadSleeper, DEFAULT_API_KEY_ENV};
pub use scripted::{ScriptFileError, ScriptedFailure, ScriptedProvider, ScriptedReply, ScriptedResponses};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Coded;
use crate::prompt::{PromptBundle, PromptKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub provider_name: String,
    pub model_name: String,
    pub latency_ms: u64,
    pub finish_reason: FinishReason,
    /// Attempts beyond the first.
    pub retries: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("temperature {0} outside [0.1, 2.0]")]
    TemperatureOutOfRange(f64),
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("server error {status} after {attempts} attempts")]
    ServerError { status: u16, attempts: u32 },
    #[error("request rejected with status {status}: {excerpt}")]
    RequestRejected { status: u16, excerpt: String },
    #[error("malformed response: {excerpt}")]
    MalformedResponse { excerpt: String },
    #[error("completion blocked by the provider's content filter")]
    ContentFiltered,
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted response left for {0:?}")]
    ScriptExhausted(PromptKind),
    #[error("request abandoned by caller")]
    Cancelled,
}

impl ProviderError {
    /// Failures worth another attempt.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::RateLimited { .. }
                | ProviderError::Timeout { .. }
                | ProviderError::ServerError { .. }
                | ProviderError::Transport(_)
        )
    }
}

impl Coded for ProviderError {
    fn code(&self) -> &'static str {
        match self {
            ProviderError::TemperatureOutOfRange(_) => "TEMPERATURE_OUT_OF_RANGE",
            ProviderError::AuthFailed(_) => "AUTH_FAILED",
            ProviderError::RateLimited { .. } => "RATE_LIMITED",
            ProviderError::Timeout { .. } => "TIMEOUT",
            ProviderError::ServerError { .. } => "SERVER_ERROR",
            ProviderError::RequestRejected { .. } => "REQUEST_REJECTED",
            ProviderError::MalformedResponse { .. } => "MALFORMED_RESPONSE",
            ProviderError::ContentFiltered => "CONTENT_FILTERED",
            ProviderError::EmptyCompletion => "EMPTY_GENERATION",
            ProviderError::Transport(_) => "TRANSPORT_ERROR",
            ProviderError::ScriptExhausted(_) => "SCRIPT_EXHAUSTED",
            ProviderError::Cancelled => "CANCELLED",
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete(bundle)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete(bundle)
    }
}

pub(crate) fn check_bundle_temperature(bundle: &PromptBundle) -> Result<(), ProviderError> {
    crate::model::check_temperature(bundle.params.temperature)
        .map_err(|_| ProviderError::TemperatureOutOfRange(bundle.params.temperature))
}
