//! Training-data builders: filtered SFT records for both tasks, reward-model
//! preference tuples and sampled GRPO query sets, with JSONL export.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QueryLogRecord, QuerySet};
use crate::generation::Task;
use crate::pipeline::Pipeline;
use crate::reward::{build_preference_pairs, PreferenceTuple};
use crate::text::normalize_query;

pub const REASON_REL_FAIL: &str = "rel_fail";
pub const REASON_SYS_FAIL: &str = "sys_fail";
pub const REASON_DUPLICATE: &str = "duplicate";
pub const REASON_GENERATION_ERROR: &str = "generation_error";
pub const REASON_JUDGE_ERROR: &str = "judge_error";
pub const REASON_NO_PREFERENCE: &str = "no_preference";

#[derive(Debug, Error)]
pub enum DatasetError {
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
}

/// One (query, knowledge, output) training example with its filter verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub query: String,
    /// Rendered knowledge section for cards, the card text for rewrites.
    pub knowledge: String,
    pub output: String,
    pub task: Task,
    /// The rewrite the system verdict was computed on.
    pub rq: String,
    pub sys_verdict: u8,
    pub rel_verdict: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: String,
    pub total_generated: usize,
    pub retained: usize,
    /// Count per rejection reason; a candidate failing both filters counts under both.
    pub rejection_reasons: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl DatasetManifest {
    fn new(task: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            ..Default::default()
        }
    }

    fn reject(&mut self, reason: &str) {
        *self.rejection_reasons.entry(reason.to_owned()).or_default() += 1;
    }

    fn absorb(&mut self, other: DatasetManifest) {
        self.total_generated += other.total_generated;
        self.retained += other.retained;
        for (k, v) in other.rejection_reasons {
            *self.rejection_reasons.entry(k).or_default() += v;
        }
        self.failures.extend(other.failures);
    }
}

fn sft_for_query(p: &Pipeline, x: &str, task: Task) -> (Vec<SftRecord>, DatasetManifest) {
    let mut manifest = DatasetManifest::new(format!("{task}-sft"));
    let n = p.config.n_samples;
    manifest.total_generated = n as usize;
    let m = p.collect(x);

    // (knowledge, output, rq) per sample
    let mut candidates: Vec<(String, String, String)> = Vec::new();
    match task {
        Task::Card => {
            let knowledge = p.templates.render_knowledge_section(&m);
            for s in 0..n {
                let r = p
                    .generate_card(x, &m, s)
                    .and_then(|card| p.rewrite(x, Some(&card), s).map(|c| (card.desc, c.rewrite)));
                match r {
                    Ok((desc, rq)) => candidates.push((knowledge.clone(), desc, rq)),
                    Err(e) => {
                        manifest.reject(REASON_GENERATION_ERROR);
                        manifest.failures.push(format!("{x}: sample {s}: {e}"));
                    }
                }
            }
        }
        Task::Rewrite => {
            let card = match p.generate_card(x, &m, 0) {
                Ok(c) => c,
                Err(e) => {
                    manifest
                        .rejection_reasons
                        .insert(REASON_GENERATION_ERROR.into(), n as usize);
                    manifest.failures.push(format!("{x}: card: {e}"));
                    return (Vec::new(), manifest);
                }
            };
            for s in 0..n {
                match p.rewrite(x, Some(&card), s) {
                    Ok(c) => candidates.push((card.desc.clone(), c.rewrite.clone(), c.rewrite)),
                    Err(e) => {
                        manifest.reject(REASON_GENERATION_ERROR);
                        manifest.failures.push(format!("{x}: sample {s}: {e}"));
                    }
                }
            }
        }
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (knowledge, output, rq) in candidates {
        if !seen.insert(normalize_query(&output)) {
            manifest.reject(REASON_DUPLICATE);
            continue;
        }
        let sys = p.sys_preference(x, &rq).value;
        let rel = match p.judge(x, &output, task) {
            Ok(v) => v,
            Err(e) => {
                manifest.reject(REASON_JUDGE_ERROR);
                manifest.failures.push(format!("{x}: {e}"));
                continue;
            }
        };
        if sys != 1 {
            manifest.reject(REASON_SYS_FAIL);
        }
        if rel != 1 {
            manifest.reject(REASON_REL_FAIL);
        }
        if sys == 1 && rel == 1 {
            records.push(SftRecord {
                query: x.to_owned(),
                knowledge,
                output,
                task,
                rq,
                sys_verdict: sys,
                rel_verdict: rel,
            });
        }
    }
    manifest.retained = records.len();
    (records, manifest)
}

/// Generates `n_samples` candidates per query and keeps those that both
/// improve on the original query in the search system and are judged
/// relevant. Identical outputs for a query are kept once.
pub fn build_sft_dataset(queries: &[String], task: Task, pipeline: &Pipeline) -> (Vec<SftRecord>, DatasetManifest) {
    let per_query = pipeline.bounded(queries, |x| sft_for_query(pipeline, x, task));
    let mut manifest = DatasetManifest::new(format!("{task}-sft"));
    let mut records = Vec::new();
    for (r, m) in per_query {
        records.extend(r);
        manifest.absorb(m);
    }
    (records, manifest)
}

/// Two full-pipeline rewrites per query, turned into preference tuples.
pub fn build_rm_dataset(queries: &[String], pipeline: &Pipeline) -> (Vec<PreferenceTuple>, DatasetManifest) {
    let per_query = pipeline.bounded(queries, |x| {
        let rewrites: Result<Vec<String>, _> = (0..2)
            .map(|s| pipeline.run(x, s).map(|o| o.candidate.rewrite))
            .collect();
        rewrites.map(|c| {
            let gt = pipeline.ground_truth.for_query(x);
            build_preference_pairs(
                x,
                &c,
                &pipeline.index,
                &gt,
                pipeline.config.sys_k,
                pipeline.config.eval_depth,
            )
        })
    });
    let mut manifest = DatasetManifest::new("rm");
    manifest.total_generated = queries.len();
    let mut tuples = Vec::new();
    for (x, r) in queries.iter().zip(per_query) {
        match r {
            Ok(pairs) if pairs.is_empty() => manifest.reject(REASON_NO_PREFERENCE),
            Ok(pairs) => tuples.extend(pairs),
            Err(e) => {
                manifest.reject(REASON_GENERATION_ERROR);
                manifest.failures.push(format!("{x}: {e}"));
            }
        }
    }
    manifest.retained = tuples.len();
    (tuples, manifest)
}

/// Distinct normalized queries of a log, sorted.
pub fn distinct_queries(log: &[QueryLogRecord]) -> Vec<String> {
    log.iter()
        .map(|r| normalize_query(&r.query))
        .filter(|q| !q.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Seeded uniform sample of `n` distinct normalized log queries, without
/// replacement: the sorted distinct list is shuffled with ChaCha8 seeded by
/// `seed` and the first `n` are kept.
pub fn sample_grpo_queries(log: &[QueryLogRecord], n: usize, seed: u64) -> QuerySet {
    assert!(n >= 1, "n must be at least 1");
    let mut all = distinct_queries(log);
    if n > all.len() {
        log::warn!("requested {n} GRPO queries but the log has only {} distinct", all.len());
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(n);
    QuerySet::new("grpo", all)
}

/// Writes one JSON record per line and returns the number written.
pub fn export_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<usize, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(records.len())
}

pub fn import_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `records` to `<dir>/<name>.jsonl` and the manifest next to it as
/// `<name>.manifest.json`.
pub fn export_with_manifest<T: Serialize>(
    records: &[T],
    manifest: &DatasetManifest,
    dir: impl AsRef<Path>,
    name: &str,
) -> Result<PathBuf, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let data = dir.join(format!("{name}.jsonl"));
    export_jsonl(records, &data)?;
    let mpath = dir.join(format!("{name}.manifest.json"));
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&mpath, body).map_err(|source| DatasetError::Io { path: mpath, source })?;
    Ok(data)
}
