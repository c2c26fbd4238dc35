//! Offline metrics: relevance rate, retrieval increment and Hitrate@K, plus
//! aggregate reports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::RetrievedList;

pub const DEFAULT_EVAL_DEPTH: usize = 300;
pub const DEFAULT_EVAL_KS: [usize; 2] = [50, 300];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("increment is undefined when the original query retrieves nothing")]
    EmptyOriginal,
    #[error("at least one K is required")]
    NoCutoffs,
}

/// Relative growth in distinct retrieved videos when the rewrite's results
/// are added to the original's: `(|V_X ∪ V_Y| - |V_X|) / |V_X|`.
pub fn increment(v_x: &RetrievedList, v_y: &RetrievedList) -> Result<f64, EvalError> {
    let base = v_x.id_set();
    if base.is_empty() {
        return Err(EvalError::EmptyOriginal);
    }
    let added = v_y.ids().collect::<BTreeSet<_>>().difference(&base).count();
    Ok(added as f64 / base.len() as f64)
}

/// 1 when any of the first `k` entries is in `ground_truth`.
pub fn hitrate_at_k(ranked: &RetrievedList, ground_truth: &BTreeSet<String>, k: usize) -> u8 {
    assert!(k >= 1, "K must be at least 1");
    u8::from(ranked.ids().take(k).any(|v| ground_truth.contains(v)))
}

/// `first` followed by the unseen ids of `second`, truncated to `k`.
pub fn merge_lists<'a>(
    first: impl IntoIterator<Item = &'a str>,
    second: impl IntoIterator<Item = &'a str>,
    k: usize,
) -> Vec<String> {
    let mut seen = HashSet::new();
    first
        .into_iter()
        .chain(second)
        .filter(|v| seen.insert(*v))
        .take(k)
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub query: String,
    pub rewrite: String,
    pub retrieved_original: RetrievedList,
    pub retrieved_rewrite: RetrievedList,
    pub ground_truth: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_verdict: Option<u8>,
}

impl EvalCase {
    /// Hit within the top `k` of the original list extended by the rewrite's list.
    pub fn merged_hit(&self, k: usize) -> u8 {
        let merged = merge_lists(self.retrieved_original.ids(), self.retrieved_rewrite.ids(), k);
        u8::from(merged.iter().any(|v| self.ground_truth.contains(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub qr_rel: Option<f64>,
    pub increment_mean: Option<f64>,
    pub hitrate_at: BTreeMap<usize, Option<f64>>,
    pub excluded_empty_gt: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate(cases: &[EvalCase], ks: &[usize]) -> Result<EvalReport, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    let qr_rel = mean(cases.iter().filter_map(|c| c.rel_verdict.map(f64::from)));
    let increment_mean = mean(
        cases
            .iter()
            .filter_map(|c| increment(&c.retrieved_original, &c.retrieved_rewrite).ok()),
    );
    let judged: Vec<&EvalCase> = cases.iter().filter(|c| !c.ground_truth.is_empty()).collect();
    let hitrate_at = ks
        .iter()
        .map(|&k| (k, mean(judged.iter().map(|c| f64::from(c.merged_hit(k))))))
        .collect();
    Ok(EvalReport {
        n_cases: cases.len(),
        qr_rel,
        increment_mean,
        hitrate_at,
        excluded_empty_gt: cases.len() - judged.len(),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{:.2}%", x * 100.0))
}

impl EvalReport {
    /// Aligned plain-text table; one row per labelled report.
    pub fn table(rows: &[(&str, &EvalReport)]) -> String {
        let ks: BTreeSet<usize> = rows.iter().flat_map(|(_, r)| r.hitrate_at.keys().copied()).collect();
        let mut header = vec!["Method".to_owned(), "QR-Rel".to_owned(), "Increment".to_owned()];
        header.extend(ks.iter().map(|k| format!("Hitrate@{k}")));
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|(name, r)| {
                let mut row = vec![(*name).to_owned(), pct(r.qr_rel), pct(r.increment_mean)];
                row.extend(ks.iter().map(|k| pct(r.hitrate_at.get(k).copied().flatten())));
                row
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                std::iter::once(&header)
                    .chain(&body)
                    .map(|r| r[i].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in std::iter::once(&header).chain(&body) {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
