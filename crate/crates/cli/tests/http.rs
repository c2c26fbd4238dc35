use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use cardrewriter::fixtures::{CreatorTypoFixture, FIXTURE_EPOCH};
use cardrewriter::serving::{CacheEntry, CacheStore, NearlineQueue};
use cardrewriter_cli::server::{router, AppState};
use serde_json::Value;
use tower::ServiceExt;

fn state(f: &CreatorTypoFixture, snapshot: Option<std::path::PathBuf>) -> AppState {
    AppState {
        pipeline: Arc::new(f.pipeline()),
        store: Arc::new(CacheStore::default()),
        queue: Arc::new(NearlineQueue::in_memory()),
        default_k: 10,
        top_n_cache: 20,
        snapshot,
    }
}

async fn call(app: &Router, method: &str, uri: &str) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn ids(v: &Value) -> Vec<String> {
    serde_json::from_value(v.clone()).unwrap()
}

const Q: &str = "Coca-Cola%20The%20Fostered%20Children";

#[tokio::test]
async fn miss_then_nearline_then_hit() {
    let f = CreatorTypoFixture::default();
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("cache.jsonl");
    let s = state(&f, Some(snap.clone()));
    let app = router(s.clone());

    let (status, body) = call(&app, "GET", &format!("/serve?q={Q}&k=10")).await;
    assert_eq!(status, StatusCode::OK);
    let before = ids(&body);
    assert!(!before.is_empty());
    assert!(before.iter().all(|id| !f.ground_truth_ids.contains(id)), "{before:?}");
    assert!(s.queue.contains(&f.query));

    let (status, _) = call(&app, "GET", &format!("/cache?q={Q}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let report = s.run_worker_batch(8);
    assert_eq!((report.processed, report.cached), (1, 1));
    assert!(snap.exists(), "snapshot written after the batch");

    let (status, entry) = call(&app, "GET", &format!("/cache?q={Q}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(entry["key"], "coca-cola the fostered children");
    assert!(!entry["rewrite"].as_str().unwrap().is_empty());

    let (status, body) = call(&app, "GET", &format!("/serve?q={Q}&k=10")).await;
    assert_eq!(status, StatusCode::OK);
    let after = ids(&body);
    assert_eq!(
        &after[..before.len()],
        &before[..],
        "original results keep their positions"
    );
    assert!(after.iter().any(|id| f.ground_truth_ids.contains(id)), "{after:?}");

    let restored = CacheStore::load_snapshot(&snap, Default::default()).unwrap();
    assert!(restored.peek(&f.query).is_some());
}

#[tokio::test]
async fn rejects_bad_parameters() {
    let f = CreatorTypoFixture::default();
    let app = router(state(&f, None));
    assert_eq!(call(&app, "GET", "/serve?q=cola&k=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "GET", "/serve?q=%20%20&k=5").await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(call(&app, "GET", "/serve?k=5").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "GET", "/serve?q=cola&k=abc").await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn default_k_and_truncation() {
    let f = CreatorTypoFixture::default();
    let app = router(state(&f, None));
    let (_, body) = call(&app, "GET", "/serve?q=coco-cola").await;
    assert!(ids(&body).len() <= 10);
    let (_, body) = call(&app, "GET", "/serve?q=coco-cola&k=2").await;
    assert_eq!(ids(&body).len(), 2);
}

#[tokio::test]
async fn sweep_evicts_stale_unhit_entries() {
    let f = CreatorTypoFixture::default();
    let s = state(&f, None);
    let entry = |key: &str, created_at: i64, hits: u64| CacheEntry {
        key: key.into(),
        video_ids: vec!["cc-1".into()],
        card_desc: String::new(),
        rewrite: "coco-cola".into(),
        created_at,
        last_hit_at: None,
        hits,
        quality: None,
    };
    let week = 7 * 24 * 3600;
    s.store.insert(entry("stale", FIXTURE_EPOCH - week - 1, 0)).unwrap();
    s.store.insert(entry("boundary", FIXTURE_EPOCH - week, 0)).unwrap();
    s.store.insert(entry("popular", FIXTURE_EPOCH - 10 * week, 3)).unwrap();
    let app = router(s.clone());

    assert_eq!(call(&app, "GET", "/cache?q=stale").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/cache?q=boundary").await.0, StatusCode::OK);

    let (status, body) = call(&app, "POST", "/admin/sweep").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["evicted"], 1);
    assert_eq!(body["remaining"], 2);
    assert_eq!(
        call(&app, "GET", "/admin/sweep").await.0,
        StatusCode::METHOD_NOT_ALLOWED
    );
}
