#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::Value;
use structmem::handle::DbHandle;
use structmem::service::{self, AppState, ServiceConfig};
use structmem::synthetic::{generate, SynthConfig};
use structmem_core::{normalize, LandmarkMask, MemoryDatabase, MemoryRecord};
use tower::ServiceExt;

/// `n` records with ids `{prefix}-{i:04}`, deterministic embeddings in `dim`
/// dimensions and small distinct landmarks.
pub fn make_db(prefix: &str, n: usize, dim: usize, seed: u64) -> MemoryDatabase {
    let data = generate(&SynthConfig {
        dim,
        clusters: 4,
        per_cluster: n.div_ceil(4),
        queries: 0,
        pairs: 0,
        mask_width: 24,
        mask_height: 24,
        seed,
        ..SynthConfig::default()
    });
    let mut db = MemoryDatabase::new(dim).unwrap();
    for (i, r) in data.records.into_iter().take(n).enumerate() {
        let mut rec = r.record;
        rec.id = format!("{prefix}-{i:04}");
        db.insert(rec).unwrap();
    }
    db
}

pub fn record(id: &str, v: &[f64]) -> MemoryRecord {
    MemoryRecord {
        id: id.into(),
        embedding: normalize(v).unwrap(),
        landmark: LandmarkMask::from_fn(8, 8, |x, y| x >= 2 && y < 6).unwrap(),
        category: "Shirt".into(),
        attributes: None,
        source: None,
    }
}

pub fn app(db: Option<MemoryDatabase>) -> (Arc<AppState>, Router) {
    let handle = match db {
        Some(db) => DbHandle::with_database(db, None).unwrap(),
        None => DbHandle::new(None),
    };
    let state = Arc::new(AppState::new(handle, ServiceConfig::default()));
    (Arc::clone(&state), service::router(state))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

pub fn row(db: &MemoryDatabase, i: usize) -> Vec<f64> {
    db.row_f64(i)
}

pub fn save(db: &MemoryDatabase, dir: &Path) {
    structmem::persist::save(db, dir).unwrap();
}
