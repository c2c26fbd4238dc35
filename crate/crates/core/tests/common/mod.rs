//! Exhaustive reference implementations and random corpora shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use cardrewriter::corpus::{Corpus, QuerySet, VideoDoc};
use cardrewriter::search::{cosine, SearchIndex, BM25_B, BM25_K1};
use cardrewriter::text::{normalize_query, tokenize};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB: [&str; 14] = [
    "cat", "dog", "funny", "cooking", "pasta", "guitar", "lesson", "travel", "tokyo", "night", "drama", "episode",
    "dance", "beach",
];

pub fn random_docs(rng: &mut ChaCha8Rng, n: usize) -> Vec<VideoDoc> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..6);
            let title: Vec<&str> = (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect();
            let mut d = VideoDoc::new(format!("v{i:03}"), title.join(" "));
            if rng.gen_bool(0.3) {
                d.author_name = VOCAB.choose(rng).unwrap().to_string();
            }
            d
        })
        .collect()
}

pub fn random_query(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..4);
    (0..len)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scores every document independently and sorts the lot.
pub fn brute_force_topk(index: &SearchIndex, query: &str, k: usize) -> Vec<(String, f64)> {
    let docs = index.corpus().docs();
    let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.searchable_text())).collect();
    let n = docs.len() as f64;
    let avg = doc_tokens.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut lexical = vec![0.0; docs.len()];
    let mut matched = vec![false; docs.len()];
    for term in &terms {
        let df = doc_tokens.iter().filter(|t| t.contains(term)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        for (i, toks) in doc_tokens.iter().enumerate() {
            let tf = toks.iter().filter(|t| *t == term).count() as f64;
            if tf > 0.0 {
                matched[i] = true;
                let norm = 1.0 - BM25_B + BM25_B * toks.len() as f64 / avg;
                lexical[i] += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
    }
    let max = lexical.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let qv = index.embed(query);
    let alpha = index.alpha();
    let mut all: Vec<(String, f64)> = (0..docs.len())
        .filter(|&i| matched[i])
        .map(|i| {
            let dense = cosine(&qv, &index.embed(&docs[i].searchable_text())).max(0.0);
            (
                docs[i].video_id.clone(),
                alpha * lexical[i] / max + (1.0 - alpha) * dense,
            )
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn index_of(docs: Vec<VideoDoc>) -> SearchIndex {
    SearchIndex::build(Arc::new(Corpus::from_docs(docs).unwrap()))
}

/// Exhaustive Q2Q: every candidate's shared-video count, then a full sort.
pub fn brute_force_q2q(x: &str, set: &QuerySet, index: &SearchIndex, k: usize, l: usize) -> Vec<(String, f64)> {
    let origin = normalize_query(x);
    let x_tokens: HashSet<String> = tokenize(x).into_iter().collect();
    let x_ids: HashSet<String> = index.retrieve_topk(x, k).ids().map(str::to_owned).collect();
    let mut out = Vec::new();
    for q in &set.queries {
        if normalize_query(q) == origin || !tokenize(q).iter().any(|t| x_tokens.contains(t)) {
            continue;
        }
        let shared = index.retrieve_topk(q, k).ids().filter(|v| x_ids.contains(*v)).count();
        if shared > 0 {
            out.push((q.clone(), shared as f64));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(l);
    out
}

pub fn brute_force_emb(x: &str, set: &QuerySet, index: &SearchIndex, l: usize) -> Vec<(String, f64)> {
    let origin = normalize_query(x);
    let xv = index.embed(x);
    let mut out: Vec<(String, f64)> = set
        .queries
        .iter()
        .filter(|q| normalize_query(q) != origin)
        .map(|q| (q.clone(), cosine(&xv, &index.embed(q))))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(l);
    out
}
