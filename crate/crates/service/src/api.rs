//! Routes, handlers and the shared application state.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use pitch_epv::data::sample_file::sha256_hex;
use pitch_epv::epv::benchmark::{BenchmarkError, BenchmarkPair, PairFile};
use pitch_epv::epv::models::{checkpoint_file, BundleError, ModelBundle, SurfaceModel};
use pitch_epv::epv::surface::{report, SurfaceReport};
use pitch_epv::model::checkpoint::FORMAT_VERSION;
use pitch_epv::model::ModelKind;
use pitch_epv::state::GameState;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::{PairStore, StoreError};

/// Checkpoint metadata reported by the health endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model: String,
    pub head: String,
    pub format_version: u32,
    /// Digest of the checkpoint file; identifies the exact weights.
    pub sha256: String,
    pub trainable_params: usize,
    pub total_params: usize,
    pub temperature: f64,
    pub meta: BTreeMap<String, String>,
}

/// Models ready to serve, with what health reports about them.
pub struct LoadedModels {
    pub model: Arc<dyn SurfaceModel + Send>,
    pub info: Vec<ModelInfo>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("reading {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Cheap startup check: the directory and all four checkpoint files exist.
pub fn preflight(dir: &Path) -> Result<(), BundleError> {
    if !dir.is_dir() {
        return Err(BundleError::MissingDir(dir.to_path_buf()));
    }
    for kind in ModelKind::ALL {
        let path = checkpoint_file(dir, kind);
        if !path.is_file() {
            return Err(BundleError::MissingFile(path));
        }
    }
    Ok(())
}

/// Loads and checks the four checkpoints under `dir`.
pub fn load_models(dir: &Path) -> Result<LoadedModels, LoadError> {
    let bundle = ModelBundle::load(dir)?;
    let mut info = Vec::new();
    for kind in ModelKind::ALL {
        let path = checkpoint_file(dir, kind);
        let bytes = std::fs::read(&path).map_err(|source| LoadError::Io { path, source })?;
        let net = bundle.get(kind);
        let counts = net.counts();
        info.push(ModelInfo {
            model: kind.name().into(),
            head: net.spec().head.name().into(),
            format_version: FORMAT_VERSION,
            sha256: sha256_hex(&bytes),
            trainable_params: counts.trainable,
            total_params: counts.total,
            temperature: net.temperature,
            meta: net.meta.clone(),
        });
    }
    Ok(LoadedModels {
        model: Arc::new(bundle),
        info,
    })
}

#[derive(Clone)]
pub struct AppState {
    models: Arc<OnceLock<LoadedModels>>,
    store: Arc<PairStore>,
}

impl AppState {
    /// State with no models yet; inference and health answer 503 until
    /// [`AppState::set_models`] is called.
    pub fn new(store: PairStore) -> Self {
        Self {
            models: Arc::new(OnceLock::new()),
            store: Arc::new(store),
        }
    }

    pub fn with_models(store: PairStore, models: LoadedModels) -> Self {
        let s = Self::new(store);
        s.set_models(models);
        s
    }

    /// Installs the models once; later calls are ignored and return false.
    pub fn set_models(&self, models: LoadedModels) -> bool {
        self.models.set(models).is_ok()
    }

    pub fn ready(&self) -> bool {
        self.models.get().is_some()
    }

    fn models(&self) -> Result<&LoadedModels, ApiError> {
        self.models
            .get()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "models are not loaded yet"))
    }
}

/// JSON error body: `{"error": ..., "path": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: msg.into(),
                path: None,
            },
        }
    }

    fn bad_request(msg: impl Into<String>, path: Option<String>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, msg);
        e.body.path = path;
        e
    }

    fn internal(msg: impl std::fmt::Display) -> Self {
        log::error!("{msg}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Invalid(BenchmarkError::State { side, source, .. }) => {
                ApiError::bad_request(source.reason, Some(format!("{side}.{}", source.path)))
            }
            StoreError::Invalid(e) => ApiError::bad_request(e.to_string(), None),
            e => ApiError::internal(e),
        }
    }
}

/// Parses a JSON body, naming the offending field on failure.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = (path != ".").then_some(path);
        ApiError::bad_request(e.into_inner().to_string(), path)
    })
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/v1/surfaces", post(surfaces))
        .route("/v1/pairs", post(create_pair).get(list_pairs))
        .route("/v1/pairs/{id}", delete(delete_pair))
        .route("/v1/health", get(health))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Validates and evaluates one state against `model`.
pub fn state_report(model: &dyn SurfaceModel, state: &GameState) -> Result<SurfaceReport, ApiError> {
    state
        .validate()
        .map_err(|e| ApiError::bad_request(e.reason, Some(e.path)))?;
    let surfaces = model
        .surfaces(&[state])
        .map_err(ApiError::internal)?
        .pop()
        .ok_or_else(|| ApiError::internal("model returned no surfaces"))?;
    report(surfaces).map_err(ApiError::internal)
}

async fn surfaces(State(app): State<AppState>, body: Bytes) -> Result<Json<SurfaceReport>, ApiError> {
    let model = app.models()?.model.clone();
    let state: GameState = parse_body(&body)?;
    let out = tokio::task::spawn_blocking(move || state_report(model.as_ref(), &state))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(out))
}

async fn create_pair(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<BenchmarkPair>), ApiError> {
    let pair: BenchmarkPair = parse_body(&body)?;
    let stored = app.store.create(pair)?;
    log::info!("stored pair {}", stored.id);
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn list_pairs(State(app): State<AppState>) -> Json<PairFile> {
    Json(app.store.list())
}

async fn delete_pair(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    if app.store.delete(&id)? {
        log::info!("deleted pair {id}");
    }
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: Vec<ModelInfo>,
}

async fn health(State(app): State<AppState>) -> Response {
    match app.models.get() {
        Some(m) => Json(Health {
            status: "ok".into(),
            models: m.info.clone(),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "loading".into(),
                models: Vec::new(),
            }),
        )
            .into_response(),
    }
}
