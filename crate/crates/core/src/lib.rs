//! Knowledge-card based rewriting of long-tail search queries over a
//! simulated short-video search system.
//!
//! The crate covers the full loop: loading corpora and logs ([`corpus`]),
//! hybrid lexical/embedding retrieval and similar-query mining ([`search`],
//! [`knowledge`]), card generation and card-based rewriting behind a
//! pluggable LLM client ([`generation`]), reward scoring ([`reward`]),
//! training-data construction ([`datasets`]), offline metrics
//! ([`evaluation`]) and near-line cached serving ([`serving`]).

pub mod corpus;
pub mod datasets;
pub mod evaluation;
pub mod fixtures;
pub mod generation;
pub mod knowledge;
pub mod pipeline;
pub mod reward;
pub mod search;
pub mod serving;
pub mod text;

pub use corpus::{Corpus, CorpusError, EventKind, QueryLogRecord, QuerySet, QueryStats, VideoDoc};
pub use datasets::{DatasetManifest, SftRecord};
pub use evaluation::{evaluate, hitrate_at_k, increment, EvalCase, EvalReport};
pub use generation::{GenerationClient, KnowledgeCard, PromptTemplates, Task};
pub use knowledge::{collect_knowledge, MultiSourceKnowledge};
pub use pipeline::{Pipeline, PipelineConfig};
pub use reward::{group_advantages, overall_reward, PreferenceTuple, SysVerdict};
pub use search::{RetrievedList, SearchIndex};
pub use serving::{serve_query, CacheEntry, CacheStore, NearlineQueue};
pub use text::normalize_query;
