//! HTTP front end for near-line serving plus the background worker that
//! drains the rewrite queue.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cardrewriter::pipeline::Pipeline;
use cardrewriter::serving::{drain_queue, serve_query, CacheStore, NearlineQueue, NearlineReport};
use serde::Deserialize;
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Arc<CacheStore>,
    pub queue: Arc<NearlineQueue>,
    pub default_k: usize,
    pub top_n_cache: usize,
    pub snapshot: Option<PathBuf>,
}

impl AppState {
    fn now(&self) -> i64 {
        self.pipeline.clock.now()
    }

    /// Processes up to `max` queued queries and persists the cache if anything changed.
    pub fn run_worker_batch(&self, max: usize) -> NearlineReport {
        let report = drain_queue(&self.queue, &self.pipeline, &self.store, self.top_n_cache, max);
        if report.cached > 0 {
            self.save_snapshot();
        }
        report
    }

    pub fn save_snapshot(&self) {
        if let Some(path) = &self.snapshot {
            match self.store.save_snapshot(path) {
                Ok(n) => log::debug!("saved {n} cache entries to {}", path.display()),
                Err(e) => log::error!("cache snapshot failed: {e}"),
            }
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ServeParams {
    q: String,
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct CacheParams {
    q: String,
}

fn bad_request(msg: &str) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg }))).into_response()
}

async fn serve(State(s): State<AppState>, Query(p): Query<ServeParams>) -> Response {
    let k = p.k.unwrap_or(s.default_k);
    if k == 0 {
        return bad_request("k must be at least 1");
    }
    if p.q.trim().is_empty() {
        return bad_request("q must not be blank");
    }
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || {
        serve_query(
            &state.store,
            &state.pipeline.index,
            Some(&state.queue),
            &p.q,
            k,
            state.now(),
        )
    })
    .await;
    match result {
        Ok(ids) => Json(ids).into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": e.to_string() })),
        )
            .into_response(),
    }
}

/// Current entry without recording a hit; expired entries read as absent.
async fn cache(State(s): State<AppState>, Query(p): Query<CacheParams>) -> Response {
    match s.store.peek(&p.q) {
        Some(e) if !s.store.policy().is_expired(&e, s.now()) => Json(e).into_response(),
        _ => (StatusCode::NOT_FOUND, Json(json!({ "error": "not cached" }))).into_response(),
    }
}

async fn sweep(State(s): State<AppState>) -> Response {
    let evicted = s.store.expiry_sweep(s.now());
    if evicted > 0 {
        s.save_snapshot();
    }
    Json(json!({ "evicted": evicted, "remaining": s.store.len() })).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/serve", get(serve))
        .route("/cache", get(cache))
        .route("/admin/sweep", post(sweep))
        .with_state(state)
}

/// Periodically drains the near-line queue on the blocking pool.
pub async fn worker(state: AppState, interval: Duration, batch: usize) {
    let mut tick = tokio::time::interval(interval);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        if state.queue.is_empty() {
            continue;
        }
        let s = state.clone();
        match tokio::task::spawn_blocking(move || s.run_worker_batch(batch)).await {
            Ok(r) => log::info!(
                "near-line batch: {} processed, {} cached, {} failed",
                r.processed,
                r.cached,
                r.failed
            ),
            Err(e) => log::error!("near-line worker panicked: {e}"),
        }
    }
}
