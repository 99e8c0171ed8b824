use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::{check_bundle_temperature, CompletionProvider, CompletionResult, FinishReason, ProviderError};
use crate::prompt::{PromptBundle, PromptKind};

/// A failure a script can inject in place of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    AuthFailed,
    RateLimited,
    Timeout,
    ServerError,
    MalformedResponse,
    ContentFiltered,
}

impl ScriptedFailure {
    fn to_error(self) -> ProviderError {
        match self {
            ScriptedFailure::AuthFailed => ProviderError::AuthFailed("scripted failure".into()),
            ScriptedFailure::RateLimited => ProviderError::RateLimited { attempts: 1 },
            ScriptedFailure::Timeout => ProviderError::Timeout { attempts: 1 },
            ScriptedFailure::ServerError => ProviderError::ServerError { status: 500, attempts: 1 },
            ScriptedFailure::MalformedResponse => ProviderError::MalformedResponse {
                excerpt: "scripted failure".into(),
            },
            ScriptedFailure::ContentFiltered => ProviderError::ContentFiltered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    Fail(ScriptedFailure),
}

/// Per-kind FIFO queues of replies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedResponses {
    queues: BTreeMap<PromptKind, VecDeque<ScriptedReply>>,
}

#[derive(Debug, Error)]
pub enum ScriptFileError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid script: {0}")]
    Parse(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    response: Vec<ScriptEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptEntry {
    kind: String,
    text: Option<String>,
    error: Option<ScriptedFailure>,
}

impl ScriptedResponses {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: PromptKind, text: impl Into<String>) -> &mut Self {
        self.queues
            .entry(kind)
            .or_default()
            .push_back(ScriptedReply::Text(text.into()));
        self
    }

    pub fn push_failure(&mut self, kind: PromptKind, failure: ScriptedFailure) -> &mut Self {
        self.queues
            .entry(kind)
            .or_default()
            .push_back(ScriptedReply::Fail(failure));
        self
    }

    pub fn with(mut self, kind: PromptKind, text: impl Into<String>) -> Self {
        self.push(kind, text);
        self
    }

    pub fn remaining(&self, kind: PromptKind) -> usize {
        self.queues.get(&kind).map_or(0, VecDeque::len)
    }

    fn pop(&mut self, kind: PromptKind) -> Option<ScriptedReply> {
        self.queues.get_mut(&kind)?.pop_front()
    }

    /// Parses a TOML script:
    ///
    /// ```toml
    /// [[response]]
    /// kind = "simulate"
    /// text = "Bob lets go of the carton."
    ///
    /// [[response]]
    /// kind = "situation_update"
    /// error = "timeout"
    /// ```
    pub fn parse(source: &str) -> Result<Self, ScriptFileError> {
        let file: ScriptFile = toml::from_str(source).map_err(|e| ScriptFileError::Parse(e.to_string()))?;
        let mut out = Self::new();
        for (i, entry) in file.response.into_iter().enumerate() {
            let kind = PromptKind::parse(&entry.kind)
                .ok_or_else(|| ScriptFileError::Parse(format!("response {i}: unknown kind {:?}", entry.kind)))?;
            match (entry.text, entry.error) {
                (Some(text), None) => out.push(kind, text),
                (None, Some(f)) => out.push_failure(kind, f),
                _ => {
                    return Err(ScriptFileError::Parse(format!(
                        "response {i}: exactly one of `text` or `error` is required"
                    )))
                }
            };
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptFileError> {
        let source = std::fs::read_to_string(path).map_err(|source| ScriptFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&source)
    }

    /// Discards the first `n` replies of `kind`; used to resume a script
    /// across processes.
    pub fn skip(&mut self, kind: PromptKind, n: usize) {
        if let Some(q) = self.queues.get_mut(&kind) {
            q.drain(..n.min(q.len()));
        }
    }
}

type Responder = Box<dyn Fn(&PromptBundle) -> Result<String, ProviderError> + Send + Sync>;

#[derive(Default)]
struct State {
    script: ScriptedResponses,
    consumed: Vec<PromptBundle>,
    counts: BTreeMap<PromptKind, usize>,
}

/// Deterministic provider answering each prompt kind from its own queue.
/// When a queue is empty, a registered responder function for that kind is
/// used; otherwise the call fails with `ScriptExhausted`.
pub struct ScriptedProvider {
    state: Mutex<State>,
    responders: BTreeMap<PromptKind, Responder>,
    delay: Option<Duration>,
}

impl ScriptedProvider {
    pub fn new(script: ScriptedResponses) -> Self {
        Self {
            state: Mutex::new(State {
                script,
                ..State::default()
            }),
            responders: BTreeMap::new(),
            delay: None,
        }
    }

    pub fn with_responder(
        mut self,
        kind: PromptKind,
        f: impl Fn(&PromptBundle) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        self.responders.insert(kind, Box::new(f));
        self
    }

    /// Sleeps this long inside every call, to emulate provider latency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn push(&self, kind: PromptKind, text: impl Into<String>) {
        self.state.lock().unwrap().script.push(kind, text);
    }

    pub fn push_failure(&self, kind: PromptKind, failure: ScriptedFailure) {
        self.state.lock().unwrap().script.push_failure(kind, failure);
    }

    /// Every bundle this provider answered or failed, in call order.
    pub fn consumed(&self) -> Vec<PromptBundle> {
        self.state.lock().unwrap().consumed.clone()
    }

    /// Queue entries consumed so far, per kind.
    pub fn consumed_counts(&self) -> BTreeMap<PromptKind, usize> {
        self.state.lock().unwrap().counts.clone()
    }

    pub fn remaining(&self, kind: PromptKind) -> usize {
        self.state.lock().unwrap().script.remaining(kind)
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        check_bundle_temperature(bundle)?;
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let reply = {
            let mut state = self.state.lock().unwrap();
            state.consumed.push(bundle.clone());
            let reply = state.script.pop(bundle.kind);
            if reply.is_some() {
                *state.counts.entry(bundle.kind).or_default() += 1;
            }
            reply
        };
        let text = match reply {
            Some(ScriptedReply::Text(t)) => t,
            Some(ScriptedReply::Fail(f)) => return Err(f.to_error()),
            None => match self.responders.get(&bundle.kind) {
                Some(f) => f(bundle)?,
                None => return Err(ProviderError::ScriptExhausted(bundle.kind)),
            },
        };
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(CompletionResult {
            text,
            provider_name: "scripted".into(),
            model_name: "scripted".into(),
            latency_ms: 0,
            finish_reason: FinishReason::Stop,
            retries: 0,
        })
    }
}
