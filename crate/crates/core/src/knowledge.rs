//! Multi-source knowledge collection for a query: knowledge extracted from
//! its own top videos, from the top videos of similar high-quality queries
//! (mined by retrieved-list overlap and by embedding similarity) and from an
//! open-domain document provider.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuerySet, VideoDoc};
use crate::search::{cosine, SearchIndex};
use crate::text::{normalize_query, tokenize};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_TOP_L: usize = 3;
pub const DEFAULT_MAX_EXTERNAL_DOCS: usize = 2;

/// Visual and textual knowledge extracted from one retrieved video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoKnowledge {
    pub video_id: String,
    pub vision: Vec<String>,
    pub title: String,
    pub caption: String,
    pub ocr: String,
    pub author: String,
    pub bgm: String,
    pub source_query: String,
}

pub fn extract_video_knowledge(video: &VideoDoc, source_query: &str) -> VideoKnowledge {
    VideoKnowledge {
        video_id: video.video_id.clone(),
        vision: video.keyframe_refs.iter().take(3).cloned().collect(),
        title: video.title.clone(),
        caption: video.caption.clone(),
        ocr: video.ocr_text.clone(),
        author: video.author_name.clone(),
        bgm: video.bgm_name.clone(),
        source_query: source_query.to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarSource {
    Q2Q,
    EMB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarQuery {
    pub query: String,
    pub source: SimilarSource,
    pub rank_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarQuerySet {
    pub origin_query: String,
    pub entries: Vec<SimilarQuery>,
}

/// An open-domain document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalDoc {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

/// Aggregated knowledge for one query. `inner` holds platform video
/// knowledge (own results first, then similar-query results), unique by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSourceKnowledge {
    pub origin_query: String,
    pub inner: Vec<VideoKnowledge>,
    pub external: Vec<ExternalDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MultiSourceKnowledge {
    pub fn has_warning(&self) -> bool {
        !self.warnings.is_empty()
    }
}

fn sort_ranked(mut ranked: Vec<(String, f64)>, l: usize) -> Vec<(String, f64)> {
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(l);
    ranked
}

/// Rule-based similar queries: candidates share a normalized token with `x`
/// and at least one top-`k` video with it; ranked by the number of shared
/// videos, ties by ascending query text.
pub fn q2q_similar(x: &str, good_set: &QuerySet, index: &SearchIndex, k: usize, l: usize) -> Vec<(String, f64)> {
    assert!(l >= 1, "l must be at least 1");
    let origin = normalize_query(x);
    let x_tokens: HashSet<String> = tokenize(x).into_iter().collect();
    let x_list = index.retrieve_topk(x, k);
    let x_ids = x_list.id_set();
    if x_ids.is_empty() {
        return Vec::new();
    }
    let ranked = good_set
        .queries
        .par_iter()
        .filter(|q| normalize_query(q) != origin)
        .filter(|q| tokenize(q).iter().any(|t| x_tokens.contains(t)))
        .filter_map(|q| {
            let shared = index.retrieve_topk(q, k).ids().filter(|v| x_ids.contains(v)).count();
            (shared > 0).then(|| (q.clone(), shared as f64))
        })
        .collect();
    sort_ranked(ranked, l)
}

/// Embedding-similar queries ranked by cosine to `x`, ties by ascending text.
pub fn emb_similar(x: &str, good_set: &QuerySet, index: &SearchIndex, l: usize) -> Vec<(String, f64)> {
    assert!(l >= 1, "l must be at least 1");
    let origin = normalize_query(x);
    let xv = index.embed(x);
    let ranked = good_set
        .queries
        .iter()
        .filter(|q| normalize_query(q) != origin)
        .map(|q| (q.clone(), cosine(&xv, &index.embed(q))))
        .collect();
    sort_ranked(ranked, l)
}

/// Union of Q2Q and EMB results, deduplicated by normalized text. Q2Q
/// entries come first and win collisions.
pub fn build_sim_query_set(
    x: &str,
    good1: &QuerySet,
    good2: &QuerySet,
    index: &SearchIndex,
    k: usize,
    l: usize,
) -> SimilarQuerySet {
    let q2q = q2q_similar(x, good1, index, k, l);
    let emb = emb_similar(x, good2, index, l);
    let mut seen = HashSet::new();
    let entries = q2q
        .into_iter()
        .map(|(q, s)| (q, s, SimilarSource::Q2Q))
        .chain(emb.into_iter().map(|(q, s)| (q, s, SimilarSource::EMB)))
        .filter(|(q, _, _)| seen.insert(normalize_query(q)))
        .map(|(query, rank_score, source)| SimilarQuery {
            query,
            source,
            rank_score,
        })
        .collect();
    SimilarQuerySet {
        origin_query: x.to_owned(),
        entries,
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("open-domain request failed: {0}")]
    Request(String),
    #[error("open-domain response malformed: {0}")]
    Malformed(String),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// Source of open-domain documents for a query.
pub trait OpenDomainProvider: Send + Sync {
    fn fetch(&self, query: &str) -> Result<Vec<ExternalDoc>, ProviderError>;
}

/// Provider that never returns documents.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProvider;

impl OpenDomainProvider for NoProvider {
    fn fetch(&self, _query: &str) -> Result<Vec<ExternalDoc>, ProviderError> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticDoc {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub match_terms: Vec<String>,
}

/// File-backed provider: a document matches when one of its normalized
/// match terms occurs in the normalized query. Results keep file order.
#[derive(Debug, Clone, Default)]
pub struct StaticProvider {
    docs: Vec<StaticDoc>,
    max_docs: usize,
}

impl StaticProvider {
    pub fn new(docs: Vec<StaticDoc>, max_docs: usize) -> Self {
        Self { docs, max_docs }
    }

    pub fn from_jsonl(path: impl AsRef<Path>, max_docs: usize) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let load_err = |message: String| ProviderError::Load {
            path: path.to_owned(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let docs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| load_err(format!("line {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(docs, max_docs))
    }
}

impl OpenDomainProvider for StaticProvider {
    fn fetch(&self, query: &str) -> Result<Vec<ExternalDoc>, ProviderError> {
        let q = normalize_query(query);
        Ok(self
            .docs
            .iter()
            .filter(|d| {
                d.match_terms.iter().any(|t| {
                    let t = normalize_query(t);
                    !t.is_empty() && q.contains(&t)
                })
            })
            .take(self.max_docs)
            .map(|d| ExternalDoc {
                doc_id: d.doc_id.clone(),
                title: d.title.clone(),
                body: d.body.clone(),
            })
            .collect())
    }
}

/// HTTP provider: `GET <endpoint>?q=<query>` returning a JSON array of documents.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    max_docs: usize,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_docs: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            max_docs,
        }
    }
}

impl OpenDomainProvider for RemoteProvider {
    fn fetch(&self, query: &str) -> Result<Vec<ExternalDoc>, ProviderError> {
        let mut resp = self
            .agent
            .get(&self.endpoint)
            .query("q", query)
            .call()
            .map_err(|e| ProviderError::Request(e.to_string()))?;
        let mut docs: Vec<ExternalDoc> = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        docs.truncate(self.max_docs);
        Ok(docs)
    }
}

/// Parameters for similar-query mining and per-query retrieval depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub k: usize,
    pub l: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            l: DEFAULT_TOP_L,
        }
    }
}

/// Gathers platform and open-domain knowledge for `x`.
///
/// Provider failures never abort collection: `external` is left empty and
/// the failure is recorded in `warnings`.
pub fn collect_knowledge(
    x: &str,
    index: &SearchIndex,
    good1: &QuerySet,
    good2: &QuerySet,
    provider: &dyn OpenDomainProvider,
    config: CollectConfig,
) -> MultiSourceKnowledge {
    let CollectConfig { k, l } = config;
    let sim = build_sim_query_set(x, good1, good2, index, k, l);
    let sources: Vec<&str> = std::iter::once(x)
        .chain(sim.entries.iter().map(|e| e.query.as_str()))
        .collect();
    let lists: Vec<_> = sources.par_iter().map(|q| index.retrieve_topk(q, k)).collect();

    let corpus = index.corpus();
    let mut seen = BTreeSet::new();
    let mut inner = Vec::new();
    for (source, list) in sources.iter().zip(&lists) {
        for id in list.ids() {
            if seen.insert(id.to_owned()) {
                let doc = corpus.get(id).expect("retrieved ids exist in the corpus");
                inner.push(extract_video_knowledge(doc, source));
            }
        }
    }

    let mut warnings = Vec::new();
    let external = provider.fetch(x).unwrap_or_else(|e| {
        log::warn!("open-domain provider failed for {x:?}: {e}");
        warnings.push(e.to_string());
        Vec::new()
    });
    MultiSourceKnowledge {
        origin_query: x.to_owned(),
        inner,
        external,
        warnings,
    }
}
