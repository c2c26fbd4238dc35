//! Deterministic hybrid retrieval standing in for the production search
//! backend: BM25 over an inverted index, re-ranked with embedding cosine.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::text::{fnv1a, normalize_query, tokenize};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_ALPHA: f64 = 0.7;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Text embedding backend. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag of hashed character 2- and 3-grams, L2-normalized.
///
/// Grams are taken over the normalized text padded with one space on each
/// side, so every non-blank input produces at least one gram.
#[derive(Debug, Clone, Copy)]
pub struct HashedNgramEmbedder {
    dim: usize,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM)
    }
}

impl Embedder for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let norm = normalize_query(text);
        if norm.is_empty() {
            return v;
        }
        let chars: Vec<char> = std::iter::once(' ')
            .chain(norm.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = String::new();
        for n in [2, 3] {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                let bucket = (fnv1a(buf.as_bytes()) % self.dim as u64) as usize;
                v[bucket] += 1.0;
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.0 {
            v.iter_mut().for_each(|x| *x /= len);
        }
        v
    }
}

/// Embeds with the default hashed n-gram embedder.
pub fn embed(text: &str) -> Vec<f64> {
    HashedNgramEmbedder::default().embed(text)
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub video_id: String,
    pub score: f64,
}

/// Ranked retrieval result, scores non-increasing, ids unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedList {
    pub query: String,
    pub entries: Vec<RetrievedEntry>,
}

impl RetrievedList {
    pub fn empty(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            entries: Vec::new(),
        }
    }

    pub fn from_ids<I, S>(query: impl Into<String>, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        let entries = ids
            .into_iter()
            .enumerate()
            .map(|(i, video_id)| RetrievedEntry {
                video_id,
                score: (n - i) as f64,
            })
            .collect();
        Self {
            query: query.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.video_id.as_str())
    }

    pub fn id_set(&self) -> BTreeSet<&str> {
        self.ids().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Weight of the lexical score; the cosine term gets `1 - alpha`.
    pub alpha: f64,
    pub embed_dim: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

/// Immutable inverted index plus per-video embeddings over a corpus.
pub struct SearchIndex {
    corpus: Arc<Corpus>,
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    doc_vectors: Vec<Vec<f64>>,
    embedder: Arc<dyn Embedder>,
    alpha: f64,
}

impl std::fmt::Debug for SearchIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchIndex")
            .field("docs", &self.corpus.len())
            .field("terms", &self.postings.len())
            .field("dim", &self.embedder.dim())
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl SearchIndex {
    pub fn build(corpus: Arc<Corpus>) -> Self {
        Self::build_with(corpus, SearchConfig::default())
    }

    pub fn build_with(corpus: Arc<Corpus>, config: SearchConfig) -> Self {
        Self::build_with_embedder(
            corpus,
            config.alpha,
            Arc::new(HashedNgramEmbedder::new(config.embed_dim)),
        )
    }

    pub fn build_with_embedder(corpus: Arc<Corpus>, alpha: f64, embedder: Arc<dyn Embedder>) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0,1]");
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        let mut doc_vectors = Vec::with_capacity(corpus.len());
        for (i, doc) in corpus.docs().iter().enumerate() {
            let text = doc.searchable_text();
            let tokens = tokenize(&text);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
            let v = embedder.embed(&text);
            assert_eq!(v.len(), embedder.dim());
            assert!(
                v.iter().all(|x| x.is_finite()),
                "embedder produced a non-finite component"
            );
            doc_vectors.push(v);
        }
        let avg_doc_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&n| f64::from(n)).sum::<f64>() / doc_len.len() as f64
        };
        Self {
            corpus,
            postings,
            doc_len,
            avg_doc_len,
            doc_vectors,
            embedder,
            alpha,
        }
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    /// Video ids containing `token`, ascending by corpus position.
    pub fn posting(&self, token: &str) -> impl Iterator<Item = &str> {
        self.postings
            .get(token)
            .into_iter()
            .flatten()
            .map(|&(i, _)| self.corpus.docs()[i].video_id.as_str())
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    /// Raw BM25 score of every document sharing a token with `query`.
    fn bm25_candidates(&self, query: &str) -> BTreeMap<usize, f64> {
        let n_docs = self.doc_len.len() as f64;
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = ((n_docs - df + 0.5) / (df + 0.5) + 1.0).ln();
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let len_norm = 1.0 - BM25_B + BM25_B * f64::from(self.doc_len[doc]) / self.avg_doc_len;
                *scores.entry(doc).or_insert(0.0) += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm);
            }
        }
        scores
    }

    /// Top-`k` videos for `query`, best first.
    ///
    /// Only documents sharing at least one token with the query are
    /// candidates. Each candidate scores
    /// `alpha * bm25 / max_bm25 + (1 - alpha) * max(0, cosine)`; ties break by
    /// ascending video id and zero scores are dropped.
    pub fn retrieve_topk(&self, query: &str, k: usize) -> RetrievedList {
        assert!(k >= 1, "k must be at least 1");
        let bm25 = self.bm25_candidates(query);
        let max = bm25.values().copied().fold(0.0_f64, f64::max);
        if bm25.is_empty() || max <= 0.0 {
            return RetrievedList::empty(query);
        }
        let qv = self.embedder.embed(query);
        let mut scored: Vec<(usize, f64)> = bm25
            .into_iter()
            .map(|(doc, lex)| {
                let dense = cosine(&qv, &self.doc_vectors[doc]).max(0.0);
                (doc, self.alpha * lex / max + (1.0 - self.alpha) * dense)
            })
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let docs = self.corpus.docs();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| docs[a.0].video_id.cmp(&docs[b.0].video_id))
        });
        scored.truncate(k);
        RetrievedList {
            query: query.to_owned(),
            entries: scored
                .into_iter()
                .map(|(doc, score)| RetrievedEntry {
                    video_id: docs[doc].video_id.clone(),
                    score,
                })
                .collect(),
        }
    }
}
