//! Knowledge-card generation and card-based rewriting on top of a pluggable
//! text-generation client.

mod client;
mod parse;
mod prompt;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{
    prompt_line_value, ClientError, FnClient, GenerationClient, GenerationRequest, HttpChatClient, HttpClientConfig,
    IdentityRewriter, LexicalJudge, ScriptedClient, SummaryCardWriter,
};
pub use parse::{find_json_object, parse_generation_json, ParseError};
pub use prompt::{fill, PromptTemplates, MAX_VIDEO_BLOCKS};

use crate::knowledge::MultiSourceKnowledge;

pub const DEFAULT_CARD_BUDGET_CHARS: usize = 200;
pub const DEFAULT_RETRIES: u32 = 2;
pub const CARD_FIELD: &str = "desc";
pub const REWRITE_FIELD: &str = "RewriteQuery";

/// The two generation tasks: producing a card, and rewriting with one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Card,
    Rewrite,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Card => "card",
            Task::Rewrite => "rewrite",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttemptError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("empty {0} output")]
    Empty(Task),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{task} generation failed after {attempts} attempts: {last}")]
pub struct GenerationError {
    pub task: Task,
    pub attempts: u32,
    pub last: AttemptError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Maximum card length in characters.
    pub card_budget_chars: usize,
    /// Extra invocations after a failed one.
    pub retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            card_budget_chars: DEFAULT_CARD_BUDGET_CHARS,
            retries: DEFAULT_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeCard {
    pub query: String,
    pub desc: String,
    pub created_at: i64,
    /// SHA-256 of the knowledge the card was generated from.
    pub source_digest: String,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteCandidate {
    pub query: String,
    pub card: Option<KnowledgeCard>,
    pub rewrite: String,
    pub client_name: String,
}

pub fn knowledge_digest(m: &MultiSourceKnowledge) -> String {
    let bytes = serde_json::to_vec(m).expect("knowledge serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Invokes `client` up to `1 + retries` times until `field` parses to a
/// non-blank string.
fn invoke_for_field(
    client: &dyn GenerationClient,
    task: Task,
    prompt: &str,
    image_refs: &[String],
    sample: u32,
    field: &str,
    retries: u32,
) -> Result<String, GenerationError> {
    let request = GenerationRequest {
        prompt,
        image_refs,
        sample,
    };
    let mut last = AttemptError::Empty(task);
    for attempt in 1..=retries + 1 {
        let result = client
            .invoke(&request)
            .map_err(AttemptError::from)
            .and_then(|raw| parse_generation_json(&raw, field).map_err(AttemptError::from))
            .and_then(|v| {
                if v.trim().is_empty() {
                    Err(AttemptError::Empty(task))
                } else {
                    Ok(v)
                }
            });
        match result {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("{task} attempt {attempt} via {} failed: {e}", client.name());
                last = e;
            }
        }
    }
    Err(GenerationError {
        task,
        attempts: retries + 1,
        last,
    })
}

/// Summarizes collected knowledge into a knowledge card.
#[derive(Clone)]
pub struct CardGenerator {
    pub client: Arc<dyn GenerationClient>,
    pub templates: Arc<PromptTemplates>,
    pub config: GenerationConfig,
}

impl CardGenerator {
    pub fn new(client: Arc<dyn GenerationClient>, templates: Arc<PromptTemplates>, config: GenerationConfig) -> Self {
        Self {
            client,
            templates,
            config,
        }
    }

    pub fn generate(
        &self,
        x: &str,
        m: &MultiSourceKnowledge,
        sample: u32,
        now: i64,
    ) -> Result<KnowledgeCard, GenerationError> {
        let (prompt, images) = self.templates.render_card_prompt(x, m, self.config.card_budget_chars);
        let desc = invoke_for_field(
            self.client.as_ref(),
            Task::Card,
            &prompt,
            &images,
            sample,
            CARD_FIELD,
            self.config.retries,
        )?;
        let budget = self.config.card_budget_chars;
        let truncated = desc.chars().count() > budget;
        let desc = if truncated {
            log::warn!("card for {x:?} exceeds {budget} chars, truncating");
            desc.chars().take(budget).collect()
        } else {
            desc
        };
        Ok(KnowledgeCard {
            query: x.to_owned(),
            desc,
            created_at: now,
            source_digest: knowledge_digest(m),
            truncated,
        })
    }
}

/// Rewrites a query, guided by a knowledge card when one is available.
#[derive(Clone)]
pub struct QueryRewriter {
    pub client: Arc<dyn GenerationClient>,
    pub templates: Arc<PromptTemplates>,
    pub config: GenerationConfig,
}

impl QueryRewriter {
    pub fn new(client: Arc<dyn GenerationClient>, templates: Arc<PromptTemplates>, config: GenerationConfig) -> Self {
        Self {
            client,
            templates,
            config,
        }
    }

    pub fn rewrite(
        &self,
        x: &str,
        card: Option<&KnowledgeCard>,
        sample: u32,
    ) -> Result<RewriteCandidate, GenerationError> {
        let prompt = self.templates.render_rewrite_prompt(x, card.map(|c| c.desc.as_str()));
        let rewrite = invoke_for_field(
            self.client.as_ref(),
            Task::Rewrite,
            &prompt,
            &[],
            sample,
            REWRITE_FIELD,
            self.config.retries,
        )?;
        Ok(RewriteCandidate {
            query: x.to_owned(),
            card: card.cloned(),
            rewrite,
            client_name: self.client.name().to_owned(),
        })
    }
}
