//! Reward signals: binary relevance judging, the search-system preference
//! verdict, the piecewise overall reward, group-relative advantages and
//! preference-pair assembly for reward-model training data.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluation::{hitrate_at_k, increment};
use crate::generation::{find_json_object, GenerationClient, GenerationRequest, PromptTemplates, Task};
use crate::search::{RetrievedList, SearchIndex};
use crate::text::normalize_query;

/// Reward granted to a relevant output the system scorer does not prefer.
pub const RELEVANT_FLOOR_REWARD: f64 = 0.1;
/// Floor on the group standard deviation.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("unparseable relevance verdict after {attempts} attempts: {last:?}")]
    Judging { attempts: u32, last: String },
    #[error("system reward must be a finite value >= 0, got {0}")]
    NegativeSystemReward(f64),
    #[error("relevance must be 0 or 1, got {0}")]
    InvalidRelevance(u8),
    #[error("remote scorer failed: {0}")]
    Scorer(String),
}

/// Reads a binary verdict: a bare `0`/`1`, or a JSON object whose
/// `relevant` (or `verdict`) field is 0/1 or a boolean.
pub fn parse_verdict(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => return Some(0),
        "1" => return Some(1),
        _ => {}
    }
    let obj = find_json_object(raw)?;
    let v = obj.get("relevant").or_else(|| obj.get("verdict"))?;
    match v {
        Value::Bool(b) => Some(u8::from(*b)),
        Value::Number(n) => match n.as_u64() {
            Some(0) => Some(0),
            Some(1) => Some(1),
            _ => None,
        },
        Value::String(s) if s == "0" || s == "1" => Some(u8::from(s == "1")),
        _ => None,
    }
}

/// Asks `judge` whether `output` is relevant to `x` for the given task.
pub fn judge_relevance(
    judge: &dyn GenerationClient,
    templates: &PromptTemplates,
    x: &str,
    output: &str,
    task: Task,
    retries: u32,
) -> Result<u8, RewardError> {
    let prompt = templates.render_judge_prompt(task, x, output);
    let mut last = String::new();
    for sample in 0..=retries {
        match judge.invoke(&GenerationRequest {
            prompt: &prompt,
            image_refs: &[],
            sample,
        }) {
            Ok(raw) => match parse_verdict(&raw) {
                Some(v) => return Ok(v),
                None => last = raw,
            },
            Err(e) => last = e.to_string(),
        }
    }
    Err(RewardError::Judging {
        attempts: retries + 1,
        last,
    })
}

/// Outcome of comparing a rewrite against its original query in the search system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SysVerdict {
    pub value: u8,
    pub hitrate_x: u8,
    pub hitrate_rq: u8,
    pub increment: f64,
}

impl SysVerdict {
    /// Lexicographic rank key of the rewrite: hitrate first, then increment.
    pub fn rank_key(&self) -> (u8, f64) {
        (self.hitrate_rq, self.increment)
    }
}

/// Increment with the empty-original case defined as the number of
/// retrieved rewrite videos (denominator clamped to one).
pub(crate) fn increment_or_count(v_x: &RetrievedList, v_rq: &RetrievedList) -> f64 {
    increment(v_x, v_rq).unwrap_or_else(|_| v_rq.id_set().len() as f64)
}

/// Verdict from already-retrieved lists. Hitrates use the top `k` of each
/// list; the increment uses the lists as given.
pub fn sys_verdict_from_lists(
    v_x: &RetrievedList,
    v_rq: &RetrievedList,
    ground_truth: &BTreeSet<String>,
    k: usize,
) -> SysVerdict {
    let (hitrate_x, hitrate_rq) = if ground_truth.is_empty() {
        (0, 0)
    } else {
        (hitrate_at_k(v_x, ground_truth, k), hitrate_at_k(v_rq, ground_truth, k))
    };
    let inc = increment_or_count(v_x, v_rq);
    let value = match hitrate_rq.cmp(&hitrate_x) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => u8::from(inc > 0.0),
    };
    SysVerdict {
        value,
        hitrate_x,
        hitrate_rq,
        increment: inc,
    }
}

/// Whether the search system prefers `rq` over `x`: compare Hitrate@K, and
/// on a tie require a positive increment at `eval_depth`.
pub fn sys_preference(
    x: &str,
    rq: &str,
    index: &SearchIndex,
    ground_truth: &BTreeSet<String>,
    k: usize,
    eval_depth: usize,
) -> SysVerdict {
    assert!(k >= 1 && k <= eval_depth, "need 1 <= K <= eval_depth");
    let v_x = index.retrieve_topk(x, eval_depth);
    let v_rq = index.retrieve_topk(rq, eval_depth);
    sys_verdict_from_lists(&v_x, &v_rq, ground_truth, k)
}

/// Combines system and relevance rewards: the system reward when positive,
/// otherwise 0.1 for a relevant output and 0 for an irrelevant one.
pub fn overall_reward(r_sys: f64, r_rel: u8) -> Result<f64, RewardError> {
    if !r_sys.is_finite() || r_sys < 0.0 {
        return Err(RewardError::NegativeSystemReward(r_sys));
    }
    if r_rel > 1 {
        return Err(RewardError::InvalidRelevance(r_rel));
    }
    Ok(if r_sys > 0.0 {
        r_sys
    } else if r_rel > 0 {
        RELEVANT_FLOOR_REWARD
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_sys: f64,
    pub r_rel: u8,
    pub r_overall: f64,
}

impl RewardBreakdown {
    pub fn new(r_sys: f64, r_rel: u8) -> Result<Self, RewardError> {
        Ok(Self {
            r_sys,
            r_rel,
            r_overall: overall_reward(r_sys, r_rel)?,
        })
    }
}

/// `(r - mean) / max(std, 1e-8)` with the population standard deviation.
/// A constant group gets exact zeros: its computed mean can be off by an
/// ulp, which the epsilon floor would otherwise amplify.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    assert!(!rewards.is_empty(), "a group needs at least one reward");
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_EPSILON);
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Scalar system-preference score for a rewrite.
pub trait SystemScorer: Send + Sync {
    fn score(&self, x: &str, rq: &str) -> Result<f64, RewardError>;
}

/// Scores directly from the search system: `value * (1 + increment)`.
pub struct SysDerivedScorer<'a> {
    pub index: &'a SearchIndex,
    pub ground_truth: &'a (dyn Fn(&str) -> BTreeSet<String> + Send + Sync),
    pub k: usize,
    pub eval_depth: usize,
}

impl SystemScorer for SysDerivedScorer<'_> {
    fn score(&self, x: &str, rq: &str) -> Result<f64, RewardError> {
        let gt = (self.ground_truth)(x);
        let v = sys_preference(x, rq, self.index, &gt, self.k, self.eval_depth);
        Ok(f64::from(v.value) * (1.0 + v.increment))
    }
}

/// Reward-model endpoint: `POST {"query", "rewrite"}` answering either a
/// bare number or `{"score": number}`. Negative scores are clamped to 0.
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into(),
        }
    }
}

impl SystemScorer for RemoteScorer {
    fn score(&self, x: &str, rq: &str) -> Result<f64, RewardError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(serde_json::json!({ "query": x, "rewrite": rq }))
            .map_err(|e| RewardError::Scorer(e.to_string()))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| RewardError::Scorer(e.to_string()))?;
        let s = v
            .as_f64()
            .or_else(|| v.get("score").and_then(Value::as_f64))
            .ok_or_else(|| RewardError::Scorer(format!("no score in {v}")))?;
        if !s.is_finite() {
            return Err(RewardError::Scorer(format!("non-finite score {s}")));
        }
        if s < 0.0 {
            log::warn!("remote scorer returned {s} for {rq:?}; clamping to 0");
            return Ok(0.0);
        }
        Ok(s)
    }
}

/// Reward breakdown for one rewrite from a system scorer and a judge verdict.
pub fn score_rewrite(scorer: &dyn SystemScorer, x: &str, rq: &str, r_rel: u8) -> Result<RewardBreakdown, RewardError> {
    RewardBreakdown::new(scorer.score(x, rq)?.max(0.0), r_rel)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub query: String,
    pub preferred: String,
    pub rejected: String,
}

/// Every strictly ordered pair of candidates under the (hitrate, increment)
/// ranking against `x`. Ties yield no pair.
pub fn build_preference_pairs(
    x: &str,
    candidates: &[String],
    index: &SearchIndex,
    ground_truth: &BTreeSet<String>,
    k: usize,
    eval_depth: usize,
) -> Vec<PreferenceTuple> {
    let v_x = index.retrieve_topk(x, eval_depth);
    let keys: Vec<(u8, f64)> = candidates
        .iter()
        .map(|c| {
            let v_c = index.retrieve_topk(c, eval_depth);
            sys_verdict_from_lists(&v_x, &v_c, ground_truth, k).rank_key()
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..candidates.len() {
        for j in 0..candidates.len() {
            let better = keys[i].0 > keys[j].0 || (keys[i].0 == keys[j].0 && keys[i].1 > keys[j].1);
            if better && normalize_query(&candidates[i]) != normalize_query(&candidates[j]) {
                pairs.push(PreferenceTuple {
                    query: x.to_owned(),
                    preferred: candidates[i].clone(),
                    rejected: candidates[j].clone(),
                });
            }
        }
    }
    pairs
}
