//! Progress events for generation requests. Every request gets a registry
//! entry holding its full event history, so late subscribers replay what
//! they missed before following live events.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Queued,
    Prompting,
    AwaitingProvider,
    Parsing,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Queued => "queued",
            Phase::Prompting => "prompting",
            Phase::AwaitingProvider => "awaiting_provider",
            Phase::Parsing => "parsing",
            Phase::Done => "done",
            Phase::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationEvent {
    pub request_id: String,
    pub seq: u32,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

struct Entry {
    events: Vec<GenerationEvent>,
    tx: broadcast::Sender<GenerationEvent>,
}

struct Inner {
    entries: HashMap<String, Entry>,
    finished: VecDeque<String>,
}

/// Registry of generation requests. Finished requests are kept for replay
/// until `retain` newer ones have finished.
#[derive(Clone)]
pub struct EventRegistry {
    inner: Arc<Mutex<Inner>>,
    retain: usize,
}

impl Default for EventRegistry {
    fn default() -> Self {
        Self::new(1024)
    }
}

/// What a subscriber gets: past events plus, unless the request already
/// finished, a receiver for the rest.
pub struct Subscription {
    pub replay: Vec<GenerationEvent>,
    pub live: Option<broadcast::Receiver<GenerationEvent>>,
}

impl EventRegistry {
    pub fn new(retain: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                entries: HashMap::new(),
                finished: VecDeque::new(),
            })),
            retain,
        }
    }

    /// Registers a new request and emits its `queued` event.
    pub fn start(&self) -> GenerationHandle {
        let id = uuid::Uuid::new_v4().to_string();
        let (tx, _) = broadcast::channel(64);
        self.inner.lock().unwrap().entries.insert(
            id.clone(),
            Entry {
                events: Vec::new(),
                tx,
            },
        );
        let handle = GenerationHandle {
            registry: self.clone(),
            request_id: id,
        };
        handle.emit(Phase::Queued, None);
        handle
    }

    fn emit(&self, request_id: &str, phase: Phase, payload: Option<Value>) {
        let mut inner = self.inner.lock().unwrap();
        let Some(entry) = inner.entries.get_mut(request_id) else {
            return;
        };
        let last = entry.events.last().map(|e| e.phase);
        // Phases only move forward, and the terminal phase happens once.
        if last.is_some_and(|p| p.is_terminal() || p >= phase) {
            return;
        }
        let event = GenerationEvent {
            request_id: request_id.to_string(),
            seq: entry.events.len() as u32,
            phase,
            payload,
        };
        entry.events.push(event.clone());
        let _ = entry.tx.send(event);
        if phase.is_terminal() {
            inner.finished.push_back(request_id.to_string());
            while inner.finished.len() > self.retain {
                if let Some(old) = inner.finished.pop_front() {
                    inner.entries.remove(&old);
                }
            }
        }
    }

    pub fn subscribe(&self, request_id: &str) -> Result<Subscription, ApiError> {
        let inner = self.inner.lock().unwrap();
        let entry = inner
            .entries
            .get(request_id)
            .ok_or_else(|| ApiError::new("UNKNOWN_REQUEST", format!("unknown generation request {request_id}")))?;
        let done = entry.events.last().is_some_and(|e| e.phase.is_terminal());
        Ok(Subscription {
            replay: entry.events.clone(),
            live: (!done).then(|| entry.tx.subscribe()),
        })
    }

    pub fn events(&self, request_id: &str) -> Option<Vec<GenerationEvent>> {
        self.inner.lock().unwrap().entries.get(request_id).map(|e| e.events.clone())
    }
}

#[derive(Clone)]
pub struct GenerationHandle {
    registry: EventRegistry,
    request_id: String,
}

impl GenerationHandle {
    pub fn request_id(&self) -> &str {
        &self.request_id
    }

    pub fn emit(&self, phase: Phase, payload: Option<Value>) {
        self.registry.emit(&self.request_id, phase, payload);
    }

    pub fn finish<T: Serialize>(&self, result: &Result<T, ApiError>) {
        match result {
            Ok(v) => self.emit(Phase::Done, serde_json::to_value(v).ok()),
            Err(e) => self.emit(
                Phase::Failed,
                Some(serde_json::json!({"error": {"code": e.code, "message": e.message}})),
            ),
        }
    }
}
