//! JSON-over-HTTP retrieval service.
//!
//! | method | path               | body                                   |
//! |--------|--------------------|----------------------------------------|
//! | POST   | `/v1/retrieve`     | `{embedding, k?, alpha?, include_soft_mask?}` |
//! | POST   | `/v1/records`      | `{id, embedding, category, attributes?, source?, landmark}` (base64 PNG/PBM) |
//! | GET    | `/v1/records/{id}` |                                        |
//! | POST   | `/v1/db/swap`      | `{path}`                               |
//! | GET    | `/v1/health`       |                                        |
//! | GET    | `/v1/stats`        |                                        |
//!
//! Errors are `{code, message}` with a stable machine-readable `code`.
//! Response bodies carry no timestamps, so identical requests against the
//! same `db_version` produce identical bytes.

use std::collections::VecDeque;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use structmem_core::slle::{self, SlleConfig};
use structmem_core::{AttributeSet, Error as CoreError, LandmarkMask, MemoryRecord, StructureEmbedding};

use crate::handle::{DbHandle, HandleError, Snapshot};
use crate::mask_io::{self, MaskFormat};
use crate::persist::{self, StoreError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServiceConfig {
    pub default_k: usize,
    pub default_alpha: f64,
    pub max_k: usize,
    pub reg_epsilon: f64,
    pub soft_mask_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let s = SlleConfig::default();
        ServiceConfig {
            default_k: s.k,
            default_alpha: s.alpha,
            max_k: 64,
            reg_epsilon: s.reg_epsilon,
            soft_mask_threshold: s.soft_mask_threshold,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.default_k == 0 || self.default_k > self.max_k {
            return Err(format!("default k must lie in 1..={}", self.max_k));
        }
        SlleConfig {
            k: self.default_k,
            alpha: self.default_alpha,
            reg_epsilon: self.reg_epsilon,
            soft_mask_threshold: self.soft_mask_threshold,
        }
        .validate()
        .map_err(|e| e.to_string())
    }
}

const LATENCY_WINDOW: usize = 4096;

#[derive(Debug, Default)]
struct Stats {
    retrieve_ok: AtomicU64,
    retrieve_err: AtomicU64,
    inserts: AtomicU64,
    swaps: AtomicU64,
    swap_failures: AtomicU64,
    latencies_us: Mutex<VecDeque<u64>>,
}

impl Stats {
    fn record_latency(&self, started: Instant) {
        let us = u64::try_from(started.elapsed().as_micros()).unwrap_or(u64::MAX);
        let mut window = self.latencies_us.lock().unwrap_or_else(PoisonError::into_inner);
        if window.len() == LATENCY_WINDOW {
            window.pop_front();
        }
        window.push_back(us);
    }
}

/// Shared state behind every route.
#[derive(Debug)]
pub struct AppState {
    pub handle: DbHandle,
    pub config: ServiceConfig,
    stats: Stats,
}

impl AppState {
    pub fn new(handle: DbHandle, config: ServiceConfig) -> Self {
        AppState {
            handle,
            config,
            stats: Stats::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn no_database() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no_database", "no database loaded")
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::DimMismatch { .. } => (StatusCode::BAD_REQUEST, "dim_mismatch"),
            CoreError::KTooLarge { .. } => (StatusCode::CONFLICT, "k_too_large"),
            CoreError::ZeroK => (StatusCode::BAD_REQUEST, "bad_k"),
            CoreError::DuplicateId(_) => (StatusCode::CONFLICT, "duplicate_id"),
            CoreError::EmptyDatabase => (StatusCode::SERVICE_UNAVAILABLE, "no_database"),
            CoreError::ZeroVector | CoreError::NonFinite => (StatusCode::BAD_REQUEST, "invalid_embedding"),
            CoreError::NumericalFailure(_) | CoreError::DegenerateFusion => {
                (StatusCode::UNPROCESSABLE_ENTITY, "numerical_failure")
            }
            _ => (StatusCode::BAD_REQUEST, "validation_failed"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<HandleError> for ApiError {
    fn from(e: HandleError) -> Self {
        match e {
            HandleError::NoDatabase => ApiError::no_database(),
            HandleError::ValidationFailed(m) => ApiError::new(StatusCode::BAD_REQUEST, "validation_failed", m),
            HandleError::Domain(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        json_response(self.status, &body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

fn snapshot(state: &AppState) -> Result<Arc<Snapshot>, ApiError> {
    state.handle.snapshot().ok_or_else(ApiError::no_database)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub include_soft_mask: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborOut {
    pub id: String,
    pub similarity: f32,
    pub rank: usize,
}

/// Embedding components and similarities are emitted as `f32` (shortest
/// round-trip form, at most 9 significant digits); weights and the
/// objective keep full `f64` precision so their sum stays exact to 1e-9.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub db_version: u64,
    pub neighbors: Vec<NeighborOut>,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub fused_embedding: Vec<f32>,
    pub landmark_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_mask: Option<String>,
}

/// Runs one retrieval against a fixed snapshot.
pub fn retrieve_on(
    snap: &Snapshot,
    req: &RetrieveRequest,
    config: &ServiceConfig,
) -> Result<RetrieveResponse, ApiError> {
    let k = req.k.unwrap_or(config.default_k);
    if k == 0 || k > config.max_k {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_k",
            format!("k must lie in 1..={}", config.max_k),
        ));
    }
    let alpha = req.alpha.unwrap_or(config.default_alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_alpha",
            "alpha must lie in [0, 1]",
        ));
    }
    let db = &snap.db;
    if req.embedding.len() != db.dim() {
        return Err(CoreError::DimMismatch {
            expected: db.dim(),
            found: req.embedding.len(),
        }
        .into());
    }
    let query = StructureEmbedding::new(req.embedding.clone())?;
    let cfg = SlleConfig {
        k,
        alpha,
        reg_epsilon: config.reg_epsilon,
        soft_mask_threshold: config.soft_mask_threshold,
    };
    let result = slle::slle_retrieve(db, &query, &cfg)?;
    let (landmark, soft_mask) = if req.include_soft_mask {
        let masks: Vec<&Arc<LandmarkMask>> = result.neighbors.iter().map(|n| &db.entry(n.index).landmark).collect();
        let soft = slle::soft_mask(&masks, &result.weights)?;
        let (w, h) = result.fused_landmark.shape();
        let png = mask_io::encode_png(&result.fused_landmark).map_err(|e| ApiError::internal(e.to_string()))?;
        let gray = mask_io::encode_gray_png(&soft, w, h).map_err(|e| ApiError::internal(e.to_string()))?;
        (Some(B64.encode(png)), Some(B64.encode(gray)))
    } else {
        (None, None)
    };
    Ok(RetrieveResponse {
        db_version: snap.version,
        neighbors: result
            .neighbors
            .iter()
            .map(|n| NeighborOut {
                id: n.id.clone(),
                similarity: n.similarity as f32,
                rank: n.rank,
            })
            .collect(),
        landmark_id: result.landmark_id().to_string(),
        weights: result.weights,
        objective: result.objective,
        fused_embedding: result.fused_embedding.to_f32(),
        landmark,
        soft_mask,
    })
}

async fn retrieve(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let started = Instant::now();
    let outcome = async {
        let req: RetrieveRequest = parse(&body)?;
        let snap = snapshot(&state)?;
        let config = state.config;
        tokio::task::spawn_blocking(move || retrieve_on(&snap, &req, &config))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
    }
    .await;
    state.stats.record_latency(started);
    match outcome {
        Ok(resp) => {
            state.stats.retrieve_ok.fetch_add(1, Ordering::Relaxed);
            Ok(json_response(StatusCode::OK, &resp))
        }
        Err(e) => {
            state.stats.retrieve_err.fetch_add(1, Ordering::Relaxed);
            Err(e)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertRequest {
    pub id: String,
    pub embedding: Vec<f64>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Base64 of a PNG or PBM file.
    pub landmark: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertResponse {
    pub id: String,
    pub db_version: u64,
}

fn decode_landmark(b64: &str) -> Result<LandmarkMask, ApiError> {
    let bytes = B64.decode(b64.trim()).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "validation_failed",
            format!("landmark is not base64: {e}"),
        )
    })?;
    let format = MaskFormat::sniff(&bytes).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "validation_failed",
            "landmark is neither PNG nor PBM",
        )
    })?;
    mask_io::decode(&bytes, format)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validation_failed", format!("landmark: {e}")))
}

async fn insert(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: InsertRequest = parse(&body)?;
    let snap = snapshot(&state)?;
    if req.embedding.len() != snap.db.dim() {
        return Err(CoreError::DimMismatch {
            expected: snap.db.dim(),
            found: req.embedding.len(),
        }
        .into());
    }
    let record = MemoryRecord {
        embedding: StructureEmbedding::new(req.embedding)?,
        landmark: decode_landmark(&req.landmark)?,
        id: req.id,
        category: req.category,
        attributes: req.attributes,
        source: req.source,
    };
    let st = Arc::clone(&state);
    let (id, db_version) = tokio::task::spawn_blocking(move || st.handle.insert(record))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    state.stats.inserts.fetch_add(1, Ordering::Relaxed);
    Ok(json_response(StatusCode::CREATED, &InsertResponse { id, db_version }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordResponse {
    pub id: String,
    pub category: String,
    pub attributes: Option<AttributeSet>,
    pub source: Option<String>,
    pub embedding: Vec<f32>,
    /// Base64 PNG.
    pub landmark: String,
    pub db_version: u64,
}

async fn get_record(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let snap = snapshot(&state)?;
    let pos = snap
        .db
        .position(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no record with id {id:?}")))?;
    let entry = snap.db.entry(pos);
    let png = mask_io::encode_png(&entry.landmark).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_response(
        StatusCode::OK,
        &RecordResponse {
            id: entry.id.clone(),
            category: entry.category.clone(),
            attributes: entry.attributes.clone(),
            source: entry.source.clone(),
            embedding: snap.db.row(pos).to_vec(),
            landmark: B64.encode(png),
            db_version: snap.version,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapRequest {
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapResponse {
    pub db_version: u64,
    pub dim: usize,
    pub count: usize,
}

async fn swap(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SwapRequest = parse(&body)?;
    let st = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let db = persist::load(&req.path).map_err(|e| match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            other => ApiError::new(StatusCode::BAD_REQUEST, "validation_failed", other.to_string()),
        })?;
        let (dim, count) = (db.dim(), db.len());
        let db_version = st.handle.swap(db)?;
        Ok::<_, ApiError>(SwapResponse { db_version, dim, count })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    match outcome {
        Ok(resp) => {
            state.stats.swaps.fetch_add(1, Ordering::Relaxed);
            Ok(json_response(StatusCode::OK, &resp))
        }
        Err(e) => {
            state.stats.swap_failures.fetch_add(1, Ordering::Relaxed);
            Err(e)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub db_version: u64,
    pub dim: Option<usize>,
    pub count: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let body = match state.handle.snapshot() {
        Some(s) => HealthResponse {
            status: "ok".into(),
            db_version: s.version,
            dim: Some(s.db.dim()),
            count: s.db.len(),
        },
        None => HealthResponse {
            status: "degraded".into(),
            db_version: 0,
            dim: None,
            count: 0,
        },
    };
    json_response(StatusCode::OK, &body)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub retrieve_ok: u64,
    pub retrieve_errors: u64,
    pub records_inserted: u64,
    pub swaps: u64,
    pub swap_failures: u64,
    pub db_version: u64,
    /// Over the most recent retrievals.
    pub latency: LatencySummary,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1] as f64 / 1000.0
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    let mut lat: Vec<u64> = state
        .stats
        .latencies_us
        .lock()
        .unwrap_or_else(PoisonError::into_inner)
        .iter()
        .copied()
        .collect();
    lat.sort_unstable();
    let s = &state.stats;
    let body = StatsResponse {
        retrieve_ok: s.retrieve_ok.load(Ordering::Relaxed),
        retrieve_errors: s.retrieve_err.load(Ordering::Relaxed),
        records_inserted: s.inserts.load(Ordering::Relaxed),
        swaps: s.swaps.load(Ordering::Relaxed),
        swap_failures: s.swap_failures.load(Ordering::Relaxed),
        db_version: state.handle.version(),
        latency: LatencySummary {
            samples: lat.len(),
            p50_ms: percentile(&lat, 50.0),
            p90_ms: percentile(&lat, 90.0),
            p99_ms: percentile(&lat, 99.0),
        },
    };
    json_response(StatusCode::OK, &body)
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/retrieve", post(retrieve))
        .route("/v1/records", post(insert))
        .route("/v1/records/{id}", get(get_record))
        .route("/v1/db/swap", post(swap))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
