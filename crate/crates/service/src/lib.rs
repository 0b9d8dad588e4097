//! HTTP service for slide tiles and region annotation.

pub mod api;
pub mod config;
pub mod overlay;
pub mod registry;
pub mod remote;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, AnnotateRequest, AnnotationResult, AppState, Region};
pub use config::{ConfigError, ServiceConfig};
pub use registry::ModelRegistry;
pub use store::SlideStore;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

/// Opens the slide store and registry; refuses duplicate model names.
pub fn build_state(config: &ServiceConfig) -> Result<Arc<AppState>, ServiceError> {
    let registry = ModelRegistry::new(&config.models)?;
    let store = SlideStore::open(&config.root)?;
    Ok(Arc::new(AppState::new(store, registry, config.worker_count())))
}

/// Binds and serves until the process is stopped. `ready` receives the
/// bound address (useful with port 0).
pub async fn serve(config: ServiceConfig, ready: Option<tokio::sync::oneshot::Sender<SocketAddr>>) -> Result<(), ServiceError> {
    let state = build_state(&config)?;
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.clone(), source })?;
    let local = listener.local_addr().map_err(ServiceError::Serve)?;
    tracing::info!(
        %local,
        slides = state.store.len(),
        models = state.registry.len(),
        "listening"
    );
    if let Some(tx) = ready {
        let _ = tx.send(local);
    }
    axum::serve(listener, router(state)).await.map_err(ServiceError::Serve)
}
