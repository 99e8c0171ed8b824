use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use tomb_core::prompt::PromptBundle;
use tomb_core::provider::{CompletionProvider, CompletionResult, ProviderError};

use crate::events::{GenerationHandle, Phase};

pub const DEFAULT_PROVIDER_CAP: usize = 4;

/// Limits how many completions run at once across all projects.
pub struct CappedProvider {
    inner: Arc<dyn CompletionProvider>,
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl CappedProvider {
    pub fn new(inner: Arc<dyn CompletionProvider>, cap: usize) -> Self {
        Self {
            inner,
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl CompletionProvider for CappedProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.cap {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        let result = self.inner.complete(bundle);
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
        result
    }
}

/// Emits `awaiting_provider` on the first completion of a request.
pub struct ObservedProvider<'a> {
    pub inner: &'a dyn CompletionProvider,
    pub handle: &'a GenerationHandle,
    called: AtomicBool,
}

impl<'a> ObservedProvider<'a> {
    pub fn new(inner: &'a dyn CompletionProvider, handle: &'a GenerationHandle) -> Self {
        Self {
            inner,
            handle,
            called: AtomicBool::new(false),
        }
    }
}

impl CompletionProvider for ObservedProvider<'_> {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        if !self.called.swap(true, Ordering::SeqCst) {
            self.handle.emit(
                Phase::AwaitingProvider,
                Some(serde_json::json!({"kind": bundle.kind.as_str()})),
            );
        }
        self.inner.complete(bundle)
    }
}
