use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use super::{check_bundle_temperature, CompletionProvider, CompletionResult, FinishReason, ProviderError};
use crate::prompt::PromptBundle;

pub const DEFAULT_API_KEY_ENV: &str = "TOMB_API_KEY";

/// Endpoint settings. Holds the *name* of the environment variable with the
/// API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_tokens: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_tokens: 1024,
        }
    }
}

impl ProviderConfig {
    /// Defaults overridden by `TOMB_BASE_URL` and `TOMB_MODEL` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var("TOMB_BASE_URL") {
            cfg.base_url = url;
        }
        if let Ok(model) = std::env::var("TOMB_MODEL") {
            cfg.model_name = model;
        }
        cfg
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Exponential backoff: `base * factor^attempt`, scaled by a uniform jitter
/// factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl Backoff {
    pub fn nominal(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry as i32))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let scale = if self.jitter > 0.0 {
            rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        self.nominal(retry).mul_f64(scale)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Shared flag a caller flips to abandon an in-flight completion.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Chat-completion client speaking the common `messages` + `temperature`
/// request shape. Documented in `PROVIDER.md`.
pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    backoff: Backoff,
    sleeper: Box<dyn Sleeper>,
    cancel: CancelToken,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider").field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(200).collect();
    if body.chars().count() > 200 {
        s.push('…');
    }
    s
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            client,
            backoff: Backoff::default(),
            sleeper: Box::new(ThreadSleeper),
            cancel: CancelToken::new(),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Sleeper + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn with_cancel(mut self, cancel: CancelToken) -> Self {
        self.cancel = cancel;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// The exact JSON request body sent for `bundle`.
    pub fn request_body(&self, bundle: &PromptBundle) -> serde_json::Value {
        json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": bundle.params.temperature,
            "max_tokens": self.config.max_tokens,
            "stream": false,
        })
    }

    fn attempt(&self, key: &str, body: &serde_json::Value, attempts: u32) -> Result<(String, FinishReason, Option<String>), ProviderError> {
        let resp = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout { attempts }
                } else {
                    ProviderError::Transport(e.without_url().to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout { attempts }
            } else {
                ProviderError::Transport(e.without_url().to_string())
            }
        })?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::AuthFailed(format!("status {status}"))),
            429 => return Err(ProviderError::RateLimited { attempts }),
            500..=599 => return Err(ProviderError::ServerError { status, attempts }),
            _ => {
                return Err(ProviderError::RequestRejected {
                    status,
                    excerpt: excerpt(&text),
                })
            }
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|_| ProviderError::MalformedResponse {
            excerpt: excerpt(&text),
        })?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| ProviderError::MalformedResponse {
            excerpt: excerpt(&text),
        })?;
        let finish = match choice.finish_reason.as_deref() {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some("content_filter") => return Err(ProviderError::ContentFiltered),
            Some(_) => FinishReason::Stop,
        };
        let content = choice.message.content.unwrap_or_default().trim().to_string();
        if content.is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok((content, finish, parsed.model))
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        check_bundle_temperature(bundle)?;
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            ProviderError::AuthFailed(format!("environment variable {} is not set", self.config.api_key_env))
        })?;
        let body = self.request_body(bundle);
        let started = Instant::now();
        let mut rng = rand::rng();
        let mut retry = 0;
        loop {
            if self.cancel.is_cancelled() {
                return Err(ProviderError::Cancelled);
            }
            match self.attempt(&key, &body, retry + 1) {
                Ok((text, finish_reason, model)) => {
                    return Ok(CompletionResult {
                        text,
                        provider_name: "http".into(),
                        model_name: model.unwrap_or_else(|| self.config.model_name.clone()),
                        latency_ms: started.elapsed().as_millis() as u64,
                        finish_reason,
                        retries: retry,
                    })
                }
                Err(e) if e.is_transient() && retry < self.config.max_retries => {
                    let delay = self.backoff.delay(retry, &mut rng);
                    warn!(error = %e, retry = retry + 1, delay_ms = delay.as_millis() as u64, "retrying completion");
                    self.sleeper.sleep(delay);
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
