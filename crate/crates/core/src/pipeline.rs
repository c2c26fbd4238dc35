//! End-to-end rewriting pipeline: knowledge collection, card generation and
//! card-based rewriting, plus the ground-truth source used for scoring.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    ground_truth_set, QueryLogRecord, QuerySet, DEFAULT_WATCH_THRESHOLD_SECONDS, DEFAULT_WINDOW_SECONDS,
};
use crate::evaluation::{EvalCase, DEFAULT_EVAL_DEPTH, DEFAULT_EVAL_KS};
use crate::generation::{
    CardGenerator, GenerationClient, GenerationConfig, GenerationError, KnowledgeCard, PromptTemplates, QueryRewriter,
    RewriteCandidate, Task,
};
use crate::knowledge::{collect_knowledge, CollectConfig, MultiSourceKnowledge, OpenDomainProvider};
use crate::reward::{judge_relevance, sys_preference, RewardError, SysVerdict};
use crate::search::{SearchConfig, SearchIndex};
use crate::text::normalize_query;

/// Source of epoch-second timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

/// Settable clock for simulations and tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(t: i64) -> Self {
        Self(AtomicI64::new(t))
    }
    pub fn set(&self, t: i64) {
        self.0.store(t, Ordering::SeqCst);
    }
    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Ground-truth engagement sets, either derived from a query log or fixed.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Log {
        log: Arc<Vec<QueryLogRecord>>,
        window_seconds: i64,
        watch_threshold_seconds: f64,
    },
    Fixed(HashMap<String, BTreeSet<String>>),
}

impl GroundTruth {
    pub fn from_log(log: Arc<Vec<QueryLogRecord>>) -> Self {
        Self::Log {
            log,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            watch_threshold_seconds: DEFAULT_WATCH_THRESHOLD_SECONDS,
        }
    }

    /// Keys are normalized on insertion.
    pub fn fixed<I, Q, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (Q, V)>,
        Q: AsRef<str>,
        V: IntoIterator,
        V::Item: Into<String>,
    {
        Self::Fixed(
            entries
                .into_iter()
                .map(|(q, vs)| (normalize_query(q.as_ref()), vs.into_iter().map(Into::into).collect()))
                .collect(),
        )
    }

    pub fn for_query(&self, query: &str) -> BTreeSet<String> {
        match self {
            Self::Log {
                log,
                window_seconds,
                watch_threshold_seconds,
            } => ground_truth_set(query, log, *window_seconds, *watch_threshold_seconds),
            Self::Fixed(map) => map.get(&normalize_query(query)).cloned().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub collect: CollectConfig,
    pub generation: GenerationConfig,
    pub search: SearchConfig,
    /// Hitrate cutoff used by the system preference verdict.
    pub sys_k: usize,
    pub eval_depth: usize,
    pub eval_ks: Vec<usize>,
    /// Candidates drawn per query when building SFT data.
    pub n_samples: u32,
    /// Upper bound on queries processed concurrently.
    pub max_in_flight: usize,
    pub max_external_docs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            collect: CollectConfig::default(),
            generation: GenerationConfig::default(),
            search: SearchConfig::default(),
            sys_k: DEFAULT_EVAL_KS[0],
            eval_depth: DEFAULT_EVAL_DEPTH,
            eval_ks: DEFAULT_EVAL_KS.to_vec(),
            n_samples: 8,
            max_in_flight: 4,
            max_external_docs: crate::knowledge::DEFAULT_MAX_EXTERNAL_DOCS,
        }
    }
}

/// Everything needed to collect, generate, rewrite and score.
#[derive(Clone)]
pub struct Pipeline {
    pub index: Arc<SearchIndex>,
    pub good1: Arc<QuerySet>,
    pub good2: Arc<QuerySet>,
    pub provider: Arc<dyn OpenDomainProvider>,
    pub cards: CardGenerator,
    pub rewriter: QueryRewriter,
    pub judge: Arc<dyn GenerationClient>,
    pub ground_truth: Arc<GroundTruth>,
    pub templates: Arc<PromptTemplates>,
    pub clock: Arc<dyn Clock>,
    pub config: PipelineConfig,
}

/// Knowledge, card and rewrite produced for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub knowledge: MultiSourceKnowledge,
    pub card: KnowledgeCard,
    pub candidate: RewriteCandidate,
}

pub struct PipelineBuilder {
    index: Arc<SearchIndex>,
    good1: Arc<QuerySet>,
    good2: Arc<QuerySet>,
    provider: Arc<dyn OpenDomainProvider>,
    card_client: Arc<dyn GenerationClient>,
    rewrite_client: Arc<dyn GenerationClient>,
    judge: Arc<dyn GenerationClient>,
    ground_truth: Arc<GroundTruth>,
    templates: Arc<PromptTemplates>,
    clock: Arc<dyn Clock>,
    config: PipelineConfig,
}

impl PipelineBuilder {
    pub fn good_sets(mut self, good1: QuerySet, good2: QuerySet) -> Self {
        self.good1 = Arc::new(good1);
        self.good2 = Arc::new(good2);
        self
    }
    pub fn provider(mut self, p: Arc<dyn OpenDomainProvider>) -> Self {
        self.provider = p;
        self
    }
    pub fn card_client(mut self, c: Arc<dyn GenerationClient>) -> Self {
        self.card_client = c;
        self
    }
    pub fn rewrite_client(mut self, c: Arc<dyn GenerationClient>) -> Self {
        self.rewrite_client = c;
        self
    }
    pub fn judge(mut self, c: Arc<dyn GenerationClient>) -> Self {
        self.judge = c;
        self
    }
    pub fn ground_truth(mut self, gt: GroundTruth) -> Self {
        self.ground_truth = Arc::new(gt);
        self
    }
    pub fn templates(mut self, t: PromptTemplates) -> Self {
        self.templates = Arc::new(t);
        self
    }
    pub fn clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }
    pub fn config(mut self, c: PipelineConfig) -> Self {
        self.config = c;
        self
    }

    pub fn build(self) -> Pipeline {
        let g = self.config.generation;
        Pipeline {
            cards: CardGenerator::new(self.card_client, self.templates.clone(), g),
            rewriter: QueryRewriter::new(self.rewrite_client, self.templates.clone(), g),
            index: self.index,
            good1: self.good1,
            good2: self.good2,
            provider: self.provider,
            judge: self.judge,
            ground_truth: self.ground_truth,
            templates: self.templates,
            clock: self.clock,
            config: self.config,
        }
    }
}

impl Pipeline {
    /// Starts from mock components: no similar-query sets, no open-domain
    /// documents, summary cards, identity rewrites and a lexical judge.
    pub fn builder(index: Arc<SearchIndex>) -> PipelineBuilder {
        use crate::generation::{IdentityRewriter, LexicalJudge, SummaryCardWriter};
        PipelineBuilder {
            index,
            good1: Arc::new(QuerySet::new("good1", Vec::<String>::new())),
            good2: Arc::new(QuerySet::new("good2", Vec::<String>::new())),
            provider: Arc::new(crate::knowledge::NoProvider),
            card_client: Arc::new(SummaryCardWriter),
            rewrite_client: Arc::new(IdentityRewriter),
            judge: Arc::new(LexicalJudge),
            ground_truth: Arc::new(GroundTruth::Fixed(HashMap::new())),
            templates: Arc::new(PromptTemplates::default()),
            clock: Arc::new(SystemClock),
            config: PipelineConfig::default(),
        }
    }

    pub fn collect(&self, x: &str) -> MultiSourceKnowledge {
        collect_knowledge(
            x,
            &self.index,
            &self.good1,
            &self.good2,
            self.provider.as_ref(),
            self.config.collect,
        )
    }

    pub fn generate_card(
        &self,
        x: &str,
        m: &MultiSourceKnowledge,
        sample: u32,
    ) -> Result<KnowledgeCard, GenerationError> {
        self.cards.generate(x, m, sample, self.clock.now())
    }

    pub fn rewrite(
        &self,
        x: &str,
        card: Option<&KnowledgeCard>,
        sample: u32,
    ) -> Result<RewriteCandidate, GenerationError> {
        self.rewriter.rewrite(x, card, sample)
    }

    /// collect → card → rewrite for one sample index.
    pub fn run(&self, x: &str, sample: u32) -> Result<PipelineOutput, GenerationError> {
        let knowledge = self.collect(x);
        let card = self.generate_card(x, &knowledge, sample)?;
        let candidate = self.rewrite(x, Some(&card), sample)?;
        Ok(PipelineOutput {
            knowledge,
            card,
            candidate,
        })
    }

    pub fn sys_preference(&self, x: &str, rq: &str) -> SysVerdict {
        let gt = self.ground_truth.for_query(x);
        sys_preference(x, rq, &self.index, &gt, self.config.sys_k, self.config.eval_depth)
    }

    pub fn judge(&self, x: &str, output: &str, task: Task) -> Result<u8, RewardError> {
        judge_relevance(
            self.judge.as_ref(),
            &self.templates,
            x,
            output,
            task,
            self.config.generation.retries,
        )
    }

    /// Evaluation case for `x` rewritten as `rewrite`, retrieved at `eval_depth`.
    pub fn eval_case(&self, x: &str, rewrite: &str, rel_verdict: Option<u8>) -> EvalCase {
        EvalCase {
            query: x.to_owned(),
            rewrite: rewrite.to_owned(),
            retrieved_original: self.index.retrieve_topk(x, self.config.eval_depth),
            retrieved_rewrite: self.index.retrieve_topk(rewrite, self.config.eval_depth),
            ground_truth: self.ground_truth.for_query(x),
            rel_verdict,
        }
    }

    /// Runs `f` on a pool bounded by `max_in_flight`, preserving input order.
    pub fn bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_in_flight.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| items.par_iter().map(f).collect())
    }
}
