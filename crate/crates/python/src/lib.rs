//! Python bindings: text normalization, metrics, rewards, retrieval and the
//! serving cache.

use std::collections::BTreeSet;
use std::sync::Arc;

use cardrewriter::corpus::{self, Corpus, VideoDoc};
use cardrewriter::evaluation;
use cardrewriter::fixtures::CreatorTypoFixture;
use cardrewriter::generation::parse_generation_json as parse_json_field;
use cardrewriter::reward;
use cardrewriter::search::{RetrievedList, SearchIndex};
use cardrewriter::serving::{self, CacheEntry, CacheStore, ExpiryPolicy, NearlineQueue};
use cardrewriter::text;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn normalize_query(text: &str) -> String {
    text::normalize_query(text)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

/// Distinct videos the rewrite adds, relative to the original result count.
#[pyfunction]
fn increment(original: Vec<String>, rewrite: Vec<String>) -> PyResult<f64> {
    evaluation::increment(
        &RetrievedList::from_ids("", original),
        &RetrievedList::from_ids("", rewrite),
    )
    .map_err(value_err)
}

/// 1 when any ground-truth id appears in the top `k` of `ranked`.
#[pyfunction]
fn hitrate_at_k(ranked: Vec<String>, ground_truth: Vec<String>, k: usize) -> u8 {
    let gt: BTreeSet<String> = ground_truth.into_iter().collect();
    evaluation::hitrate_at_k(&RetrievedList::from_ids("", ranked), &gt, k)
}

#[pyfunction]
fn overall_reward(r_sys: f64, r_rel: u8) -> PyResult<f64> {
    reward::overall_reward(r_sys, r_rel).map_err(value_err)
}

#[pyfunction]
fn group_advantages(rewards: Vec<f64>) -> Vec<f64> {
    reward::group_advantages(&rewards)
}

/// Extracts `field` from the first JSON object embedded in a model response.
#[pyfunction]
fn parse_generation_json(raw: &str, field: &str) -> PyResult<String> {
    parse_json_field(raw, field).map_err(value_err)
}

/// Hybrid lexical/embedding index over a video corpus.
#[pyclass(frozen, name = "Index")]
struct PyIndex {
    inner: Arc<SearchIndex>,
}

#[pymethods]
impl PyIndex {
    /// Builds from `(video_id, title, author_name)` triples.
    #[new]
    fn new(docs: Vec<(String, String, String)>) -> PyResult<Self> {
        let docs = docs
            .into_iter()
            .map(|(id, title, author)| {
                let mut d = VideoDoc::new(id, title);
                d.author_name = author;
                d
            })
            .collect();
        let corpus = Corpus::from_docs(docs).map_err(value_err)?;
        Ok(Self {
            inner: Arc::new(SearchIndex::build(Arc::new(corpus))),
        })
    }

    #[staticmethod]
    fn from_jsonl(path: &str) -> PyResult<Self> {
        let corpus = corpus::load_video_corpus(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: Arc::new(SearchIndex::build(Arc::new(corpus))),
        })
    }

    /// Top `k` `(video_id, score)` pairs, best first.
    fn search(&self, py: Python<'_>, query: &str, k: usize) -> Vec<(String, f64)> {
        let list = py.detach(|| self.inner.retrieve_topk(query, k));
        list.entries.into_iter().map(|e| (e.video_id, e.score)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.corpus().len()
    }
}

fn entry_dict<'py>(py: Python<'py>, e: &CacheEntry) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("key", &e.key)?;
    d.set_item("video_ids", &e.video_ids)?;
    d.set_item("card_desc", &e.card_desc)?;
    d.set_item("rewrite", &e.rewrite)?;
    d.set_item("created_at", e.created_at)?;
    d.set_item("last_hit_at", e.last_hit_at)?;
    d.set_item("hits", e.hits)?;
    Ok(d)
}

/// Near-line rewrite cache with miss-TTL expiry.
#[pyclass(frozen, name = "Cache")]
struct PyCache {
    inner: CacheStore,
}

#[pymethods]
impl PyCache {
    #[new]
    #[pyo3(signature = (miss_ttl_seconds = serving::DEFAULT_MISS_TTL_SECONDS))]
    fn new(miss_ttl_seconds: i64) -> PyResult<Self> {
        Ok(Self {
            inner: CacheStore::new(policy(miss_ttl_seconds)?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, miss_ttl_seconds = serving::DEFAULT_MISS_TTL_SECONDS))]
    fn load(path: &str, miss_ttl_seconds: i64) -> PyResult<Self> {
        let inner = CacheStore::load_snapshot(path, policy(miss_ttl_seconds)?)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (query, video_ids, rewrite, created_at, card_desc = String::new()))]
    fn insert(
        &self,
        query: &str,
        video_ids: Vec<String>,
        rewrite: String,
        created_at: i64,
        card_desc: String,
    ) -> PyResult<()> {
        self.inner
            .insert(CacheEntry {
                key: query.to_owned(),
                video_ids,
                card_desc,
                rewrite,
                created_at,
                last_hit_at: None,
                hits: 0,
                quality: None,
            })
            .map_err(value_err)
    }

    /// Cached ids for `query`, recording a hit; expired entries are evicted.
    fn lookup(&self, query: &str, now: i64) -> Option<Vec<String>> {
        self.inner.lookup(query, now).map(|e| e.video_ids)
    }

    fn peek<'py>(&self, py: Python<'py>, query: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
        self.inner.peek(query).map(|e| entry_dict(py, &e)).transpose()
    }

    fn sweep(&self, now: i64) -> usize {
        self.inner.expiry_sweep(now)
    }

    fn save(&self, path: &str) -> PyResult<usize> {
        self.inner
            .save_snapshot(path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn evictions(&self) -> u64 {
        self.inner.evictions()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn policy(miss_ttl_seconds: i64) -> PyResult<ExpiryPolicy> {
    let p = ExpiryPolicy {
        miss_ttl_seconds,
        ..Default::default()
    };
    p.validate().map_err(value_err)?;
    Ok(p)
}

/// Live results for `query`, extended by the cached rewrite's results on a hit.
#[pyfunction]
fn serve(cache: &PyCache, index: &PyIndex, query: &str, k: usize, now: i64) -> PyResult<Vec<String>> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be at least 1"));
    }
    Ok(serving::serve_query(&cache.inner, &index.inner, None, query, k, now))
}

/// Runs the built-in misspelled-creator scenario: a miss, one near-line pass, then a hit.
#[pyfunction]
fn demo(py: Python<'_>) -> PyResult<Bound<'_, PyDict>> {
    let f = CreatorTypoFixture::default();
    let p = f.pipeline();
    let store = CacheStore::default();
    let queue = NearlineQueue::in_memory();
    let now = p.clock.now();
    let before = serving::serve_query(&store, &f.index, Some(&queue), &f.query, 10, now);
    serving::drain_queue(&queue, &p, &store, serving::DEFAULT_TOP_N_CACHE, 1);
    let after = serving::serve_query(&store, &f.index, Some(&queue), &f.query, 10, now);
    let d = PyDict::new(py);
    d.set_item("query", &f.query)?;
    d.set_item("ground_truth", &f.ground_truth_ids)?;
    d.set_item("before", before)?;
    d.set_item("after", after)?;
    if let Some(e) = store.peek(&f.query) {
        d.set_item("rewrite", e.rewrite)?;
        d.set_item("card", e.card_desc)?;
    }
    Ok(d)
}

#[pymodule]
fn pycardrewriter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_query, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(increment, m)?)?;
    m.add_function(wrap_pyfunction!(hitrate_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(overall_reward, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(parse_generation_json, m)?)?;
    m.add_function(wrap_pyfunction!(serve, m)?)?;
    m.add_function(wrap_pyfunction!(demo, m)?)?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyCache>()?;
    Ok(())
}
