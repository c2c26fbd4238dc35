//! Near-line serving: eligibility selection, background rewriting into a
//! key-value cache with expiry, and the online path that appends cached
//! videos to live results.

use std::collections::{HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QueryStats;
use crate::evaluation::merge_lists;
use crate::pipeline::Pipeline;
use crate::search::SearchIndex;
use crate::text::normalize_query;

pub const DEFAULT_MISS_TTL_SECONDS: i64 = 7 * 24 * 3600;
pub const DEFAULT_TOP_N_CACHE: usize = 20;

#[derive(Debug, Error)]
pub enum ServingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("near-line rewrite of {query:?} failed at {stage}: {message}")]
    Stage {
        query: String,
        stage: &'static str,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Which queries are worth precomputing rewrites for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EligibilityRule {
    pub min_daily: f64,
    pub max_daily: f64,
    pub require_not_username_only: bool,
    pub max_relevance: f64,
    pub max_ctr: f64,
    pub min_reformulation_rate: f64,
}

impl Default for EligibilityRule {
    /// Traffic band 5..=300; the poor-retrieval thresholds default to
    /// pass-everything and are meant to be set per deployment.
    fn default() -> Self {
        Self {
            min_daily: 5.0,
            max_daily: 300.0,
            require_not_username_only: true,
            max_relevance: 1.0,
            max_ctr: 1.0,
            min_reformulation_rate: 0.0,
        }
    }
}

impl EligibilityRule {
    pub fn validate(&self) -> Result<(), ServingError> {
        if self.min_daily > self.max_daily {
            return Err(ServingError::Config(format!(
                "min_daily {} exceeds max_daily {}",
                self.min_daily, self.max_daily
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, s: &QueryStats) -> bool {
        (self.min_daily..=self.max_daily).contains(&s.avg_daily_searches_7d)
            && !(self.require_not_username_only && s.is_username_only)
            && s.avg_relevance <= self.max_relevance
            && s.ctr <= self.max_ctr
            && s.reformulation_rate >= self.min_reformulation_rate
    }
}

/// Queries of `stats` accepted by `rule`, in input order.
pub fn select_eligible(stats: &[QueryStats], rule: &EligibilityRule) -> Vec<String> {
    stats
        .iter()
        .filter(|s| rule.accepts(s))
        .map(|s| s.query.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub relevance: f64,
    pub ctr: f64,
}

/// Early-expiry condition over an entry's quality stats. Entries without
/// stats never match.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityPredicate {
    #[default]
    Never,
    /// Matches when relevance or CTR falls below its threshold.
    Below { relevance: f64, ctr: f64 },
    /// Matches when relevance or CTR rises above its threshold.
    Above { relevance: f64, ctr: f64 },
}

impl QualityPredicate {
    pub fn matches(&self, q: Option<&QualityStats>) -> bool {
        match (self, q) {
            (_, None) | (Self::Never, _) => false,
            (Self::Below { relevance, ctr }, Some(q)) => q.relevance < *relevance || q.ctr < *ctr,
            (Self::Above { relevance, ctr }, Some(q)) => q.relevance > *relevance || q.ctr > *ctr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpiryPolicy {
    pub miss_ttl_seconds: i64,
    pub quality_predicate: QualityPredicate,
}

impl Default for ExpiryPolicy {
    fn default() -> Self {
        Self {
            miss_ttl_seconds: DEFAULT_MISS_TTL_SECONDS,
            quality_predicate: QualityPredicate::Never,
        }
    }
}

impl ExpiryPolicy {
    pub fn validate(&self) -> Result<(), ServingError> {
        if self.miss_ttl_seconds <= 0 {
            return Err(ServingError::Config("miss_ttl_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Never-hit entries older than the TTL, or entries matching the quality predicate.
    pub fn is_expired(&self, e: &CacheEntry, now: i64) -> bool {
        (e.hits == 0 && now - e.created_at > self.miss_ttl_seconds)
            || self.quality_predicate.matches(e.quality.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// Normalized query.
    pub key: String,
    pub video_ids: Vec<String>,
    pub card_desc: String,
    pub rewrite: String,
    pub created_at: i64,
    #[serde(default)]
    pub last_hit_at: Option<i64>,
    #[serde(default)]
    pub hits: u64,
    #[serde(default)]
    pub quality: Option<QualityStats>,
}

impl CacheEntry {
    pub fn validate(&self) -> Result<(), ServingError> {
        let mut seen = HashSet::new();
        if self.video_ids.is_empty() || !self.video_ids.iter().all(|v| seen.insert(v)) {
            return Err(ServingError::Config(format!(
                "cache entry {:?} needs non-empty, duplicate-free video_ids",
                self.key
            )));
        }
        Ok(())
    }
}

/// Concurrent in-process key-value store of cache entries.
#[derive(Debug, Default)]
pub struct CacheStore {
    map: DashMap<String, CacheEntry>,
    policy: ExpiryPolicy,
    evicted: AtomicU64,
}

impl CacheStore {
    pub fn new(policy: ExpiryPolicy) -> Self {
        Self {
            map: DashMap::new(),
            policy,
            evicted: AtomicU64::new(0),
        }
    }

    pub fn policy(&self) -> &ExpiryPolicy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total entries removed by lookups and sweeps.
    pub fn evictions(&self) -> u64 {
        self.evicted.load(Ordering::SeqCst)
    }

    /// Inserts under the normalized key, replacing any previous entry.
    pub fn insert(&self, mut entry: CacheEntry) -> Result<(), ServingError> {
        entry.validate()?;
        entry.key = normalize_query(&entry.key);
        self.map.insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Returns the unexpired entry for `query` and records the hit; an
    /// expired entry is removed and reported as a miss.
    pub fn lookup(&self, query: &str, now: i64) -> Option<CacheEntry> {
        let key = normalize_query(query);
        {
            let mut e = self.map.get_mut(&key)?;
            if !self.policy.is_expired(&e, now) {
                e.hits += 1;
                e.last_hit_at = Some(now);
                return Some(e.clone());
            }
        }
        if self
            .map
            .remove_if(&key, |_, e| self.policy.is_expired(e, now))
            .is_some()
        {
            self.evicted.fetch_add(1, Ordering::SeqCst);
        }
        None
    }

    /// Current entry without recording a hit or expiring it.
    pub fn peek(&self, query: &str) -> Option<CacheEntry> {
        self.map.get(&normalize_query(query)).map(|e| e.clone())
    }

    /// Removes every expired entry and returns how many were removed.
    pub fn expiry_sweep(&self, now: i64) -> usize {
        let mut n = 0;
        self.map.retain(|_, e| {
            let expired = self.policy.is_expired(e, now);
            n += usize::from(expired);
            !expired
        });
        self.evicted.fetch_add(n as u64, Ordering::SeqCst);
        n
    }

    pub fn keys(&self) -> Vec<String> {
        let mut k: Vec<String> = self.map.iter().map(|e| e.key().clone()).collect();
        k.sort();
        k
    }

    /// Writes all entries, sorted by key, one JSON object per line.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<usize, ServingError> {
        let path = path.as_ref();
        let io = |source| ServingError::Io {
            path: path.to_owned(),
            source,
        };
        let mut entries: Vec<CacheEntry> = self.map.iter().map(|e| e.value().clone()).collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for e in &entries {
            serde_json::to_writer(&mut w, e).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(entries.len())
    }

    pub fn load_snapshot(path: impl AsRef<Path>, policy: ExpiryPolicy) -> Result<Self, ServingError> {
        let path = path.as_ref();
        let store = Self::new(policy);
        let text = fs::read_to_string(path).map_err(|source| ServingError::Io {
            path: path.to_owned(),
            source,
        })?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |message: String| ServingError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let e: CacheEntry = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            store.insert(e).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(store)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum QueueOp {
    Enqueue { query: String },
    Done { query: String },
}

#[derive(Debug, Default)]
struct QueueState {
    pending: VecDeque<String>,
    /// Pending or taken but not yet done.
    open: HashSet<String>,
    log: Option<File>,
}

/// Work queue of normalized queries awaiting near-line rewriting. When
/// file-backed, every enqueue and completion is appended to a log that is
/// replayed on open, so unfinished work survives restarts.
#[derive(Debug, Default)]
pub struct NearlineQueue {
    state: Mutex<QueueState>,
    path: Option<PathBuf>,
}

impl NearlineQueue {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServingError> {
        let path = path.as_ref().to_owned();
        let io = |source| ServingError::Io {
            path: path.clone(),
            source,
        };
        let mut state = QueueState::default();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io)?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                // A torn final line from a crash mid-append is skipped.
                let op: QueueOp = match serde_json::from_str(line) {
                    Ok(op) => op,
                    Err(e) => {
                        log::warn!("{}:{}: skipping unreadable queue record: {e}", path.display(), i + 1);
                        continue;
                    }
                };
                match op {
                    QueueOp::Enqueue { query } => {
                        if state.open.insert(query.clone()) {
                            state.pending.push_back(query);
                        }
                    }
                    QueueOp::Done { query } => {
                        state.open.remove(&query);
                        state.pending.retain(|q| q != &query);
                    }
                }
            }
        }
        state.log = Some(OpenOptions::new().create(true).append(true).open(&path).map_err(io)?);
        Ok(Self {
            state: Mutex::new(state),
            path: Some(path),
        })
    }

    fn append(&self, state: &mut QueueState, op: &QueueOp) -> Result<(), ServingError> {
        if let Some(f) = state.log.as_mut() {
            let mut line = serde_json::to_string(op).expect("queue op serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|source| ServingError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        Ok(())
    }

    /// Adds the normalized query unless it is already open; returns whether it was added.
    pub fn enqueue(&self, query: &str) -> Result<bool, ServingError> {
        let query = normalize_query(query);
        if query.is_empty() {
            return Ok(false);
        }
        let mut s = self.state.lock().expect("queue lock");
        if s.open.contains(&query) {
            return Ok(false);
        }
        self.append(&mut s, &QueueOp::Enqueue { query: query.clone() })?;
        s.open.insert(query.clone());
        s.pending.push_back(query);
        Ok(true)
    }

    /// Takes the oldest pending query. It stays open until [`Self::done`],
    /// and is replayed after a restart if never completed.
    pub fn take(&self) -> Option<String> {
        self.state.lock().expect("queue lock").pending.pop_front()
    }

    pub fn done(&self, query: &str) -> Result<(), ServingError> {
        let mut s = self.state.lock().expect("queue lock");
        self.append(
            &mut s,
            &QueueOp::Done {
                query: query.to_owned(),
            },
        )?;
        s.open.remove(query);
        Ok(())
    }

    pub fn pending(&self) -> Vec<String> {
        self.state.lock().expect("queue lock").pending.iter().cloned().collect()
    }

    pub fn contains(&self, query: &str) -> bool {
        self.state
            .lock()
            .expect("queue lock")
            .open
            .contains(&normalize_query(query))
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// collect → card → rewrite → retrieve for one query, producing a cache
/// entry. If card generation fails the rewrite proceeds without a card and
/// the entry's `card_desc` is left empty.
pub fn nearline_rewrite(query: &str, pipeline: &Pipeline, top_n_cache: usize) -> Result<CacheEntry, ServingError> {
    let stage_err = |stage, message: String| ServingError::Stage {
        query: query.to_owned(),
        stage,
        message,
    };
    let key = normalize_query(query);
    if key.is_empty() {
        return Err(stage_err("input", "blank query".into()));
    }
    let m = pipeline.collect(&key);
    let card = match pipeline.generate_card(&key, &m, 0) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("card generation for {key:?} failed, rewriting without a card: {e}");
            None
        }
    };
    let rq = pipeline
        .rewrite(&key, card.as_ref(), 0)
        .map_err(|e| stage_err("rewrite", e.to_string()))?
        .rewrite;
    let video_ids: Vec<String> = pipeline
        .index
        .retrieve_topk(&rq, top_n_cache.max(1))
        .ids()
        .map(str::to_owned)
        .collect();
    if video_ids.is_empty() {
        return Err(stage_err("retrieve", format!("rewrite {rq:?} retrieved nothing")));
    }
    Ok(CacheEntry {
        key,
        video_ids,
        card_desc: card.map(|c| c.desc).unwrap_or_default(),
        rewrite: rq,
        created_at: pipeline.clock.now(),
        last_hit_at: None,
        hits: 0,
        quality: None,
    })
}

/// Live top-`k` for `query` with any cached videos appended, deduplicated
/// and truncated to `k`. A miss returns the live list and, when a queue is
/// given, enqueues the query for near-line processing.
pub fn serve_query(
    store: &CacheStore,
    index: &SearchIndex,
    queue: Option<&NearlineQueue>,
    query: &str,
    k: usize,
    now: i64,
) -> Vec<String> {
    assert!(k >= 1, "k must be at least 1");
    let live = index.retrieve_topk(query, k);
    match store.lookup(query, now) {
        Some(entry) => merge_lists(live.ids(), entry.video_ids.iter().map(String::as_str), k),
        None => {
            if let Some(q) = queue {
                if let Err(e) = q.enqueue(query) {
                    log::error!("failed to enqueue {query:?}: {e}");
                }
            }
            live.ids().map(str::to_owned).collect()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearlineReport {
    pub processed: usize,
    pub cached: usize,
    pub failed: usize,
}

/// Rewrites `queries` with bounded parallelism and caches every success.
pub fn run_nearline_batch(
    queries: &[String],
    pipeline: &Pipeline,
    store: &CacheStore,
    top_n_cache: usize,
) -> NearlineReport {
    let results = pipeline.bounded(queries, |q| nearline_rewrite(q, pipeline, top_n_cache));
    let mut report = NearlineReport {
        processed: queries.len(),
        ..Default::default()
    };
    for r in results {
        match r.and_then(|e| store.insert(e)) {
            Ok(()) => report.cached += 1,
            Err(e) => {
                log::warn!("{e}");
                report.failed += 1;
            }
        }
    }
    report
}

/// Drains up to `max` queued queries, caching successes. Every taken query
/// is marked done, failed or not, so a persistently failing query does not
/// block the queue; it is re-enqueued on its next miss.
pub fn drain_queue(
    queue: &NearlineQueue,
    pipeline: &Pipeline,
    store: &CacheStore,
    top_n_cache: usize,
    max: usize,
) -> NearlineReport {
    let batch: Vec<String> = std::iter::from_fn(|| queue.take()).take(max).collect();
    let report = run_nearline_batch(&batch, pipeline, store, top_n_cache);
    for q in &batch {
        if let Err(e) = queue.done(q) {
            log::error!("{e}");
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, VideoDoc};
    use crate::generation::{FnClient, GenerationRequest, ScriptedClient};
    use std::sync::Arc;

    const DAY: i64 = 24 * 3600;

    fn stats(avg: f64) -> QueryStats {
        QueryStats {
            query: format!("q{avg}"),
            avg_daily_searches_7d: avg,
            is_username_only: false,
            avg_relevance: 0.2,
            ctr: 0.01,
            reformulation_rate: 0.5,
        }
    }

    fn entry(key: &str, ids: &[&str], created_at: i64) -> CacheEntry {
        CacheEntry {
            key: key.into(),
            video_ids: ids.iter().map(|s| s.to_string()).collect(),
            card_desc: String::new(),
            rewrite: key.into(),
            created_at,
            last_hit_at: None,
            hits: 0,
            quality: None,
        }
    }

    fn index() -> Arc<SearchIndex> {
        let docs = vec![
            VideoDoc::new("a", "apple one"),
            VideoDoc::new("b", "apple two"),
            VideoDoc::new("c", "cherry"),
        ];
        Arc::new(SearchIndex::build(Arc::new(Corpus::from_docs(docs).unwrap())))
    }

    #[test]
    fn eligibility() {
        let rule = EligibilityRule::default();
        assert!(select_eligible(&[stats(4.0)], &rule).is_empty());
        let mut user = stats(100.0);
        user.is_username_only = true;
        assert!(select_eligible(&[user], &rule).is_empty());
        let strict = EligibilityRule {
            max_relevance: 0.3,
            max_ctr: 0.05,
            min_reformulation_rate: 0.4,
            ..rule
        };
        assert_eq!(select_eligible(&[stats(100.0)], &strict), vec!["q100"]);
        let tighter = EligibilityRule {
            max_ctr: 0.001,
            ..strict
        };
        assert!(select_eligible(&[stats(100.0)], &tighter).is_empty());
        assert!(EligibilityRule {
            min_daily: 10.0,
            max_daily: 1.0,
            ..rule
        }
        .validate()
        .is_err());
    }

    #[test]
    fn lookup_hits_and_expiry() {
        let store = CacheStore::new(ExpiryPolicy::default());
        store.insert(entry("Hello  World", &["a"], 0)).unwrap();
        let hit = store.lookup("hello world", 3600).unwrap();
        assert_eq!((hit.hits, hit.last_hit_at), (1, Some(3600)));
        assert_eq!(store.lookup("HELLO world", 7200).unwrap().hits, 2);
        assert!(store.lookup("never", 0).is_none());

        store.insert(entry("cold", &["a"], 0)).unwrap();
        assert!(
            store.lookup("cold", 7 * DAY).is_some(),
            "exactly seven days is still live"
        );
        store.insert(entry("cold", &["a"], 0)).unwrap();
        assert!(store.lookup("cold", 7 * DAY + 1).is_none());
        assert!(store.peek("cold").is_none());
        assert_eq!(store.evictions(), 1);
    }

    #[test]
    fn sweep_rules() {
        let store = CacheStore::new(ExpiryPolicy::default());
        store.insert(entry("old", &["a"], 0)).unwrap();
        store.insert(entry("hit", &["a"], 0)).unwrap();
        store.lookup("hit", 10).unwrap();
        store.insert(entry("fresh", &["a"], 7 * DAY)).unwrap();
        assert_eq!(store.expiry_sweep(8 * DAY), 1);
        assert_eq!(store.keys(), vec!["fresh", "hit"]);

        let q = ExpiryPolicy {
            quality_predicate: QualityPredicate::Below {
                relevance: 0.5,
                ctr: 0.0,
            },
            ..Default::default()
        };
        let store = CacheStore::new(q);
        let mut poor = entry("poor", &["a"], 0);
        poor.quality = Some(QualityStats {
            relevance: 0.1,
            ctr: 0.3,
        });
        store.insert(poor).unwrap();
        store.insert(entry("unknown", &["a"], 0)).unwrap();
        assert_eq!(store.expiry_sweep(1), 1);
        assert!(QualityPredicate::Above {
            relevance: 0.9,
            ctr: 0.9
        }
        .matches(Some(&QualityStats {
            relevance: 1.0,
            ctr: 0.0
        })));
    }

    #[test]
    fn invalid_entries_rejected() {
        let store = CacheStore::default();
        assert!(store.insert(entry("x", &[], 0)).is_err());
        assert!(store.insert(entry("x", &["a", "a"], 0)).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::default();
        store.insert(entry("b", &["x", "y"], 5)).unwrap();
        store.insert(entry("a", &["z"], 6)).unwrap();
        store.lookup("a", 7);
        let path = dir.path().join("cache.jsonl");
        assert_eq!(store.save_snapshot(&path).unwrap(), 2);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""key":"a""#));
        let back = CacheStore::load_snapshot(&path, ExpiryPolicy::default()).unwrap();
        assert_eq!(back.peek("a"), store.peek("a"));
        assert_eq!(back.peek("b"), store.peek("b"));
    }

    #[test]
    fn durable_queue_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queue.jsonl");
        {
            let q = NearlineQueue::open(&path).unwrap();
            assert!(q.enqueue("One").unwrap());
            assert!(!q.enqueue(" one ").unwrap());
            assert!(q.enqueue("two").unwrap());
            assert!(q.enqueue("three").unwrap());
            assert_eq!(q.take().as_deref(), Some("one"));
            q.done("one").unwrap();
            assert_eq!(q.take().as_deref(), Some("two")); // taken, never completed
        }
        let q = NearlineQueue::open(&path).unwrap();
        assert_eq!(q.pending(), vec!["two", "three"]);
        fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"op\":")
            .unwrap();
        assert_eq!(NearlineQueue::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn serve_merges_and_enqueues() {
        let idx = index();
        let store = CacheStore::default();
        let queue = NearlineQueue::in_memory();
        let live: Vec<String> = idx.retrieve_topk("apple", 10).ids().map(str::to_owned).collect();
        assert_eq!(serve_query(&store, &idx, Some(&queue), "apple", 10, 0), live);
        assert!(queue.contains("apple"));

        store.insert(entry("apple", &["b", "c"], 0)).unwrap();
        let out = serve_query(&store, &idx, Some(&queue), "apple", 10, 1);
        assert_eq!(out.len(), 3);
        assert_eq!(&out[..2], &live[..]);
        assert_eq!(out[2], "c");
        assert_eq!(serve_query(&store, &idx, None, "apple", 2, 2), live);
    }

    #[test]
    fn nearline_stages() {
        let idx = index();
        let p = Pipeline::builder(idx.clone())
            .rewrite_client(Arc::new(
                ScriptedClient::new("rw").otherwise(r#"{"RewriteQuery": "cherry"}"#),
            ))
            .build();
        let e = nearline_rewrite("Apple", &p, 5).unwrap();
        assert_eq!((e.key.as_str(), e.video_ids.clone()), ("apple", vec!["c".to_owned()]));
        let again = nearline_rewrite("apple", &p, 5).unwrap();
        assert_eq!(CacheEntry { created_at: 0, ..again }, CacheEntry { created_at: 0, ..e });

        let nothing = Pipeline::builder(idx.clone())
            .rewrite_client(Arc::new(
                ScriptedClient::new("rw").otherwise(r#"{"RewriteQuery": "zzz"}"#),
            ))
            .build();
        let err = nearline_rewrite("apple", &nothing, 5).unwrap_err();
        assert!(matches!(err, ServingError::Stage { stage: "retrieve", .. }));

        // failing card falls back to a card-less rewrite
        let no_card = Pipeline::builder(idx)
            .card_client(Arc::new(ScriptedClient::new("bad").otherwise("no json")))
            .rewrite_client(Arc::new(FnClient::new("rw", |r: &GenerationRequest<'_>| {
                assert!(!r.prompt.contains("Requirements Analysis: card"));
                Ok(r#"{"RewriteQuery": "apple two"}"#.to_owned())
            })))
            .build();
        let e = nearline_rewrite("apple", &no_card, 5).unwrap();
        assert!(e.card_desc.is_empty());
        assert_eq!(e.video_ids[0], "b");
    }

    #[test]
    fn drain_processes_queue() {
        let idx = index();
        let p = Pipeline::builder(idx.clone()).build();
        let store = CacheStore::default();
        let queue = NearlineQueue::in_memory();
        for q in ["apple", "zzz", "cherry"] {
            queue.enqueue(q).unwrap();
        }
        let r = drain_queue(&queue, &p, &store, 5, 10);
        assert_eq!(
            r,
            NearlineReport {
                processed: 3,
                cached: 2,
                failed: 1
            }
        );
        assert!(queue.is_empty() && !queue.contains("zzz"));
        assert_eq!(store.keys(), vec!["apple", "cherry"]);
    }
}
