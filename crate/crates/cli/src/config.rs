//! TOML configuration: data locations, client backends, open-domain
//! provider and serving parameters. Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use cardrewriter::corpus::{self, Corpus, QueryLogRecord, QuerySet, QueryStats};
use cardrewriter::generation::{
    GenerationClient, HttpChatClient, HttpClientConfig, IdentityRewriter, LexicalJudge, PromptTemplates,
    SummaryCardWriter,
};
use cardrewriter::knowledge::{
    NoProvider, OpenDomainProvider, RemoteProvider, StaticProvider, DEFAULT_MAX_EXTERNAL_DOCS,
};
use cardrewriter::pipeline::{GroundTruth, Pipeline, PipelineConfig};
use cardrewriter::search::SearchIndex;
use cardrewriter::serving::{EligibilityRule, ExpiryPolicy, DEFAULT_TOP_N_CACHE};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub data: DataPaths,
    pub pipeline: PipelineConfig,
    pub clients: Clients,
    pub provider: ProviderSpec,
    pub serving: ServingConfig,
    /// Directory of `<name>.txt` prompt templates overriding the built-ins.
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub videos: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub query_sets: Option<PathBuf>,
    /// Names of the sets used for rule-based and embedding mining.
    pub good1: String,
    pub good2: String,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            videos: None,
            log: None,
            stats: None,
            query_sets: None,
            good1: "good1".into(),
            good2: "good2".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clients {
    pub card: ClientSpec,
    pub rewrite: ClientSpec,
    pub judge: ClientSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClientSpec {
    /// Built-in deterministic mock for the role.
    #[default]
    Mock,
    Http(HttpClientConfig),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    #[default]
    None,
    Static {
        path: PathBuf,
        #[serde(default = "default_max_docs")]
        max_docs: usize,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_seconds: u64,
        #[serde(default = "default_max_docs")]
        max_docs: usize,
    },
}

fn default_max_docs() -> usize {
    DEFAULT_MAX_EXTERNAL_DOCS
}

fn default_timeout() -> u64 {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    pub default_k: usize,
    pub top_n_cache: usize,
    /// Cache snapshot loaded at startup and written after updates.
    pub snapshot: Option<PathBuf>,
    /// Durable near-line queue; in-memory when absent.
    pub queue: Option<PathBuf>,
    pub expiry: ExpiryPolicy,
    pub eligibility: EligibilityRule,
    /// Enqueue every eligible query from the stats file at startup.
    pub prewarm_eligible: bool,
    pub worker_interval_ms: u64,
    pub worker_batch: usize,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            default_k: 10,
            top_n_cache: DEFAULT_TOP_N_CACHE,
            snapshot: None,
            queue: None,
            expiry: ExpiryPolicy::default(),
            eligibility: EligibilityRule::default(),
            prewarm_eligible: false,
            worker_interval_ms: 1000,
            worker_batch: 16,
        }
    }
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.data.videos);
        fix(&mut self.data.log);
        fix(&mut self.data.stats);
        fix(&mut self.data.query_sets);
        fix(&mut self.serving.snapshot);
        fix(&mut self.serving.queue);
        fix(&mut self.templates_dir);
        if let ProviderSpec::Static { path, .. } = &mut self.provider {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.serving.eligibility.validate()?;
        self.serving.expiry.validate()?;
        if self.serving.default_k == 0 || self.serving.top_n_cache == 0 {
            bail!("serving.default_k and serving.top_n_cache must be at least 1");
        }
        let p = &self.pipeline;
        if p.sys_k == 0 || p.sys_k > p.eval_depth || p.collect.k == 0 || p.collect.l == 0 {
            bail!("need 1 <= pipeline.sys_k <= pipeline.eval_depth and collect.k, collect.l >= 1");
        }
        Ok(())
    }

    pub fn corpus(&self) -> Result<Arc<Corpus>> {
        let path = self.data.videos.as_ref().context("data.videos is not configured")?;
        Ok(Arc::new(corpus::load_video_corpus(path)?))
    }

    pub fn index(&self) -> Result<Arc<SearchIndex>> {
        Ok(Arc::new(SearchIndex::build_with(self.corpus()?, self.pipeline.search)))
    }

    pub fn log(&self) -> Result<Vec<QueryLogRecord>> {
        match &self.data.log {
            Some(p) => Ok(corpus::load_query_log(p)?),
            None => Ok(Vec::new()),
        }
    }

    pub fn stats(&self) -> Result<Vec<QueryStats>> {
        match &self.data.stats {
            Some(p) => Ok(corpus::load_query_stats(p)?),
            None => Ok(Vec::new()),
        }
    }

    /// The two mining sets; a missing file or set name yields an empty set.
    pub fn good_sets(&self) -> Result<(QuerySet, QuerySet)> {
        let sets = match &self.data.query_sets {
            Some(p) => corpus::load_query_sets(p)?,
            None => Vec::new(),
        };
        let pick = |name: &str| {
            sets.iter().find(|s| s.name == name).cloned().unwrap_or_else(|| {
                log::warn!("query set {name:?} not found; using an empty set");
                QuerySet::new(name, Vec::<String>::new())
            })
        };
        Ok((pick(&self.data.good1), pick(&self.data.good2)))
    }

    pub fn provider(&self) -> Result<Arc<dyn OpenDomainProvider>> {
        Ok(match &self.provider {
            ProviderSpec::None => Arc::new(NoProvider),
            ProviderSpec::Static { path, max_docs } => Arc::new(StaticProvider::from_jsonl(path, *max_docs)?),
            ProviderSpec::Remote {
                endpoint,
                timeout_seconds,
                max_docs,
            } => Arc::new(RemoteProvider::new(
                endpoint.clone(),
                Duration::from_secs(*timeout_seconds),
                *max_docs,
            )),
        })
    }

    /// Full pipeline over the configured data, with ground truth from the log.
    pub fn pipeline(&self, index: Arc<SearchIndex>) -> Result<Pipeline> {
        let (good1, good2) = self.good_sets()?;
        let templates = match &self.templates_dir {
            Some(dir) => PromptTemplates::from_dir(dir).with_context(|| format!("templates in {}", dir.display()))?,
            None => PromptTemplates::default(),
        };
        Ok(Pipeline::builder(index)
            .good_sets(good1, good2)
            .provider(self.provider()?)
            .card_client(client(&self.clients.card, Arc::new(SummaryCardWriter)))
            .rewrite_client(client(&self.clients.rewrite, Arc::new(IdentityRewriter)))
            .judge(client(&self.clients.judge, Arc::new(LexicalJudge)))
            .ground_truth(GroundTruth::from_log(Arc::new(self.log()?)))
            .templates(templates)
            .config(self.pipeline.clone())
            .build())
    }
}

fn client(spec: &ClientSpec, mock: Arc<dyn GenerationClient>) -> Arc<dyn GenerationClient> {
    match spec {
        ClientSpec::Mock => mock,
        ClientSpec::Http(c) => Arc::new(HttpChatClient::new(c.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.toml");
        std::fs::write(
            &path,
            r#"
[data]
videos = "videos.jsonl"
log = "/abs/log.jsonl"

[pipeline]
n_samples = 4

[clients.rewrite]
kind = "http"
endpoint = "http://localhost:9/v1/chat/completions"
model = "m"

[provider]
kind = "static"
path = "docs.jsonl"

[serving]
default_k = 20
queue = "queue.jsonl"

[serving.expiry.quality_predicate]
kind = "below"
relevance = 0.2
ctr = 0.01
"#,
        )
        .unwrap();
        let c = AppConfig::load(&path).unwrap();
        assert_eq!(
            c.data.videos.as_deref(),
            Some(dir.path().join("videos.jsonl").as_path())
        );
        assert_eq!(c.data.log.as_deref(), Some(Path::new("/abs/log.jsonl")));
        assert_eq!(c.pipeline.n_samples, 4);
        assert!(matches!(c.clients.card, ClientSpec::Mock));
        assert!(matches!(&c.clients.rewrite, ClientSpec::Http(h) if h.model == "m"));
        assert!(matches!(&c.provider, ProviderSpec::Static { path, max_docs: 2 } if path.ends_with("docs.jsonl")));
        assert_eq!(c.serving.default_k, 20);
        assert_eq!(c.serving.top_n_cache, DEFAULT_TOP_N_CACHE);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[serving.eligibility]\nmin_daily = 10.0\nmax_daily = 1.0\n").unwrap();
        assert!(AppConfig::load(&path).is_err());
        std::fs::write(&path, "[serving]\nunknown = 1\n").unwrap();
        assert!(AppConfig::load(&path).is_err());
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").expect("toml block in README") + "```toml\n".len();
        let text = &readme[start..start + readme[start..].find("```").unwrap()];
        let c: AppConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
    }
}
