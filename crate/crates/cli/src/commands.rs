//! Subcommand implementations, kept free of argument parsing so they can be
//! exercised directly from tests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use cardrewriter::corpus::{self, QueryLogRecord};
use cardrewriter::datasets::{
    build_rm_dataset, build_sft_dataset, distinct_queries, export_with_manifest, import_jsonl, sample_grpo_queries,
    DatasetManifest,
};
use cardrewriter::evaluation::{evaluate, EvalCase, EvalReport};
use cardrewriter::fixtures::CreatorTypoFixture;
use cardrewriter::generation::Task;
use cardrewriter::search::{RetrievedList, SearchIndex};
use cardrewriter::serving::{select_eligible, serve_query, CacheStore, EligibilityRule, NearlineQueue};
use serde::Serialize;

use crate::config::AppConfig;
use crate::server::{self, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetTask {
    CardSft,
    RewriteSft,
    Rm,
    Grpo,
}

impl DatasetTask {
    fn name(self) -> &'static str {
        match self {
            Self::CardSft => "card-sft",
            Self::RewriteSft => "rewrite-sft",
            Self::Rm => "rm",
            Self::Grpo => "grpo",
        }
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct IngestSummary {
    pub videos: usize,
    pub vocabulary: usize,
    pub log_records: usize,
    pub sessions: usize,
    pub distinct_queries: usize,
    pub stats_rows: usize,
    /// Stats rows accepted by the default eligibility rule.
    pub eligible: usize,
}

pub fn ingest(videos: &Path, log: &Path, stats: &Path) -> Result<IngestSummary> {
    let corpus = Arc::new(corpus::load_video_corpus(videos)?);
    let index = SearchIndex::build(corpus.clone());
    let records = corpus::load_query_log(log)?;
    let stats = corpus::load_query_stats(stats)?;
    let sessions: BTreeSet<&str> = records.iter().map(|r| r.session_id.as_str()).collect();
    Ok(IngestSummary {
        videos: corpus.len(),
        vocabulary: index.vocabulary_size(),
        log_records: records.len(),
        sessions: sessions.len(),
        distinct_queries: distinct_queries(&records).len(),
        stats_rows: stats.len(),
        eligible: select_eligible(&stats, &EligibilityRule::default()).len(),
    })
}

pub fn search(index: &SearchIndex, query: &str, k: usize) -> Result<RetrievedList> {
    if k == 0 {
        bail!("--k must be at least 1");
    }
    Ok(index.retrieve_topk(query, k))
}

/// One query per non-blank line.
pub fn read_query_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub struct DatasetOptions {
    pub queries: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
}

/// Builds one dataset and writes `<out>/<task>.jsonl` plus its manifest.
pub fn build_datasets(
    config: &AppConfig,
    task: DatasetTask,
    out: &Path,
    opts: &DatasetOptions,
) -> Result<(PathBuf, DatasetManifest)> {
    let log: Vec<QueryLogRecord> = config.log()?;
    if task == DatasetTask::Grpo {
        if log.is_empty() {
            bail!("grpo sampling needs a query log (data.log)");
        }
        let set = sample_grpo_queries(&log, opts.n.max(1), opts.seed);
        let manifest = DatasetManifest {
            task: task.name().into(),
            total_generated: distinct_queries(&log).len(),
            retained: set.len(),
            ..Default::default()
        };
        let path = export_with_manifest(&[set], &manifest, out, task.name())?;
        return Ok((path, manifest));
    }

    let queries = match &opts.queries {
        Some(p) => read_query_lines(p)?,
        None => distinct_queries(&log),
    };
    if queries.is_empty() {
        bail!("no queries: pass --queries or configure data.log");
    }
    let pipeline = config.pipeline(config.index()?)?;
    let name = task.name();
    let (path, manifest) = match task {
        DatasetTask::CardSft | DatasetTask::RewriteSft => {
            let t = if task == DatasetTask::CardSft {
                Task::Card
            } else {
                Task::Rewrite
            };
            let (records, manifest) = build_sft_dataset(&queries, t, &pipeline);
            (export_with_manifest(&records, &manifest, out, name)?, manifest)
        }
        DatasetTask::Rm => {
            let (tuples, manifest) = build_rm_dataset(&queries, &pipeline);
            (export_with_manifest(&tuples, &manifest, out, name)?, manifest)
        }
        DatasetTask::Grpo => unreachable!("handled above"),
    };
    Ok((path, manifest))
}

pub fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad cutoff {p:?}")))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        bail!("cutoffs must be positive integers");
    }
    Ok(ks)
}

pub fn eval(cases: &Path, ks: &[usize], label: &str) -> Result<(EvalReport, String)> {
    let cases: Vec<EvalCase> = import_jsonl(cases)?;
    let report = evaluate(&cases, ks)?;
    let table = EvalReport::table(&[(label, &report)]);
    Ok((report, table))
}

pub async fn serve(config: AppConfig, port: u16) -> Result<()> {
    let index = config.index()?;
    let pipeline = Arc::new(config.pipeline(index)?);
    let s = &config.serving;
    let store = match &s.snapshot {
        Some(p) if p.exists() => CacheStore::load_snapshot(p, s.expiry)?,
        _ => CacheStore::new(s.expiry),
    };
    let queue = match &s.queue {
        Some(p) => NearlineQueue::open(p)?,
        None => NearlineQueue::in_memory(),
    };
    if s.prewarm_eligible {
        let eligible = select_eligible(&config.stats()?, &s.eligibility);
        for q in &eligible {
            if store.peek(q).is_none() {
                queue.enqueue(q)?;
            }
        }
        log::info!("queued {} eligible queries for near-line rewriting", eligible.len());
    }
    let state = AppState {
        pipeline,
        store: Arc::new(store),
        queue: Arc::new(queue),
        default_k: s.default_k,
        top_n_cache: s.top_n_cache,
        snapshot: s.snapshot.clone(),
    };
    tokio::spawn(server::worker(
        state.clone(),
        Duration::from_millis(s.worker_interval_ms.max(1)),
        s.worker_batch.max(1),
    ));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("serving on {}", listener.local_addr()?);
    let final_state = state.clone();
    axum::serve(listener, server::router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    final_state.save_snapshot();
    Ok(())
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::warn!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

#[derive(Debug, Serialize)]
pub struct DemoOutcome {
    pub query: String,
    pub ground_truth: Vec<String>,
    pub before: Vec<String>,
    pub card: String,
    pub rewrite: String,
    pub after: Vec<String>,
}

/// Runs the misspelled-creator fixture through a miss, a near-line pass and a hit.
pub fn demo() -> Result<DemoOutcome> {
    let f = CreatorTypoFixture::default();
    let p = f.pipeline();
    let store = CacheStore::default();
    let queue = NearlineQueue::in_memory();
    let now = p.clock.now();
    let before = serve_query(&store, &f.index, Some(&queue), &f.query, 10, now);
    let report = cardrewriter::serving::drain_queue(&queue, &p, &store, 20, 8);
    if report.cached != 1 {
        bail!("near-line pass did not cache the query: {report:?}");
    }
    let entry = store.peek(&f.query).context("entry missing after the near-line pass")?;
    let after = serve_query(&store, &f.index, Some(&queue), &f.query, 10, now);
    Ok(DemoOutcome {
        query: f.query.clone(),
        ground_truth: p.ground_truth.for_query(&f.query).into_iter().collect(),
        before,
        card: entry.card_desc,
        rewrite: entry.rewrite,
        after,
    })
}
