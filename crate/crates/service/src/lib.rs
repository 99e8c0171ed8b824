//! Persistence and HTTP API for story instruments. [`ops::Workspace`] holds
//! the operations; [`http::router`] exposes them over HTTP with a
//! server-sent event stream per generation request.

pub mod error;
pub mod events;
pub mod http;
pub mod ops;
pub mod provider;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use tomb_core::provider::CompletionProvider;
use tracing::info;

pub use error::ApiError;
pub use events::{EventRegistry, GenerationEvent, Phase};
pub use http::{router, AppState};
pub use ops::Workspace;
pub use provider::{CappedProvider, DEFAULT_PROVIDER_CAP};

pub const DEFAULT_DATA_DIR_ENV: &str = "TOMB_DATA_DIR";

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    pub provider: Option<Arc<dyn CompletionProvider>>,
    pub provider_cap: usize,
}

impl AppState {
    pub fn new(
        data_dir: impl Into<PathBuf>,
        provider: Option<Arc<dyn CompletionProvider>>,
        provider_cap: usize,
    ) -> Result<Self, ApiError> {
        Ok(Self {
            workspace: Arc::new(Workspace::open(data_dir)?),
            provider: provider.map(|p| Arc::new(CappedProvider::new(p, provider_cap)) as Arc<dyn CompletionProvider>),
            events: EventRegistry::default(),
        })
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(&config.data_dir, config.provider, config.provider_cap)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "serving");
    axum::serve(listener, router(state)).await
}
