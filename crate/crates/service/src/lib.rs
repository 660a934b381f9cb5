//! HTTP facade over the pass-value engine.
//!
//! `POST /v1/surfaces` evaluates a game state, `/v1/pairs` persists
//! authored benchmark pairs and `GET /v1/health` reports the loaded
//! checkpoints. Models load once at startup and are shared read-only; the
//! listener comes up first and inference answers 503 until loading ends.

pub mod api;
pub mod config;
pub mod store;

pub use api::{load_models, preflight, router, state_report, AppState, ErrorBody, Health, LoadedModels, ModelInfo};
pub use config::{ServiceConfig, CKPTS_ENV};
pub use store::{PairStore, StoreError};

use std::future::{Future, IntoFuture};
use std::net::SocketAddr;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot start: {0}")]
    Checkpoints(#[from] pitch_epv::epv::models::BundleError),
    #[error("cannot start: {0}")]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("loading models: {0}")]
    Load(#[from] api::LoadError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs the service until `shutdown` resolves.
///
/// Refuses to start when the checkpoint directory or a checkpoint is
/// missing, and stops with an error if a checkpoint fails to load.
pub async fn serve(
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ServeError> {
    preflight(&config.checkpoints)?;
    let store = PairStore::open(&config.pair_store)?;
    let state = AppState::new(store);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.bind,
            source,
        })?;
    let addr = listener.local_addr()?;
    log::info!("listening on {addr}");
    on_bound(addr);

    let app = router(state.clone(), config.max_body_bytes);
    let server = axum::serve(listener, app).with_graceful_shutdown(shutdown);
    let dir = config.checkpoints.clone();
    let load = async move {
        let models = tokio::task::spawn_blocking(move || load_models(&dir))
            .await
            .map_err(std::io::Error::other)??;
        log::info!("models loaded from {}", config.checkpoints.display());
        state.set_models(models);
        Ok::<(), ServeError>(())
    };
    let server = server.into_future();
    tokio::pin!(server);
    tokio::select! {
        r = &mut server => return Ok(r?),
        r = load => r?,
    }
    Ok(server.await?)
}
