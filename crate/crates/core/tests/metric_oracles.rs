//! Evaluation metrics and reward rules checked against direct set-based
//! recomputation.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use cardrewriter::corpus::{Corpus, VideoDoc};
use cardrewriter::evaluation::{evaluate, hitrate_at_k, increment, EvalCase};
use cardrewriter::reward::{build_preference_pairs, group_advantages, sys_verdict_from_lists};
use cardrewriter::search::{RetrievedList, SearchIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn list(ids: &[&str]) -> RetrievedList {
    RetrievedList::from_ids("q", ids.iter().copied())
}

fn random_ids(rng: &mut ChaCha8Rng, universe: usize, max_len: usize) -> Vec<String> {
    let mut all: Vec<String> = (0..universe).map(|i| format!("v{i}")).collect();
    all.shuffle(rng);
    all.truncate(rng.gen_range(0..=max_len.min(universe)));
    all
}

fn union_oracle(x: &[String], y: &[String]) -> f64 {
    let sx: HashSet<&String> = x.iter().collect();
    let su: HashSet<&String> = x.iter().chain(y).collect();
    (su.len() - sx.len()) as f64 / sx.len() as f64
}

#[test]
fn increment_worked_examples() {
    assert_eq!(
        increment(&list(&["a", "b", "c", "d"]), &list(&["c", "d", "e", "f"])).unwrap(),
        0.5
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..20 {
        let x: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let y: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
        let got = increment(
            &RetrievedList::from_ids("x", x.clone()),
            &RetrievedList::from_ids("y", y.clone()),
        )
        .unwrap();
        assert_eq!(got, 1.0);
        assert_eq!(got, union_oracle(&x, &y));
    }
    for _ in 0..500 {
        let x = random_ids(&mut rng, 60, 40);
        let y = random_ids(&mut rng, 60, 40);
        let got = increment(
            &RetrievedList::from_ids("x", x.clone()),
            &RetrievedList::from_ids("y", y.clone()),
        );
        if x.is_empty() {
            assert!(got.is_err());
        } else {
            assert_eq!(got.unwrap(), union_oracle(&x, &y));
        }
    }
}

#[test]
fn hitrate_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let ranked: Vec<String> = random_ids(&mut rng, 400, 200);
        let truth: BTreeSet<String> = random_ids(&mut rng, 400, 5).into_iter().collect();
        let k = rng.gen_range(1..=250);
        let mut oracle = 0;
        for (pos, v) in ranked.iter().enumerate() {
            if pos < k && truth.contains(v) {
                oracle = 1;
                break;
            }
        }
        assert_eq!(hitrate_at_k(&RetrievedList::from_ids("q", ranked), &truth, k), oracle);
    }
}

#[test]
fn evaluate_equals_recomputed_aggregates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases: Vec<EvalCase> = (0..50)
        .map(|i| EvalCase {
            query: format!("q{i}"),
            rewrite: format!("r{i}"),
            retrieved_original: RetrievedList::from_ids("o", random_ids(&mut rng, 80, 60)),
            retrieved_rewrite: RetrievedList::from_ids("r", random_ids(&mut rng, 80, 60)),
            ground_truth: random_ids(&mut rng, 80, 3).into_iter().collect(),
            rel_verdict: if rng.gen_bool(0.8) {
                Some(rng.gen_range(0..2))
            } else {
                None
            },
        })
        .collect();
    let ks = [5, 50];
    let report = evaluate(&cases, &ks).unwrap();

    let judged: Vec<u8> = cases.iter().filter_map(|c| c.rel_verdict).collect();
    let rel = judged.iter().map(|&v| f64::from(v)).sum::<f64>() / judged.len() as f64;
    assert!((report.qr_rel.unwrap() - rel).abs() < 1e-12);

    let incs: Vec<f64> = cases
        .iter()
        .filter(|c| !c.retrieved_original.is_empty())
        .map(|c| {
            let x: Vec<String> = c.retrieved_original.ids().map(str::to_owned).collect();
            let y: Vec<String> = c.retrieved_rewrite.ids().map(str::to_owned).collect();
            union_oracle(&x, &y)
        })
        .collect();
    let inc = incs.iter().sum::<f64>() / incs.len() as f64;
    assert!((report.increment_mean.unwrap() - inc).abs() < 1e-12);

    let with_truth: Vec<&EvalCase> = cases.iter().filter(|c| !c.ground_truth.is_empty()).collect();
    assert_eq!(report.excluded_empty_gt, 50 - with_truth.len());
    for k in ks {
        let hits = with_truth
            .iter()
            .filter(|c| {
                let mut merged: Vec<&str> = Vec::new();
                for v in c.retrieved_original.ids().chain(c.retrieved_rewrite.ids()) {
                    if !merged.contains(&v) {
                        merged.push(v);
                    }
                }
                merged.iter().take(k).any(|v| c.ground_truth.contains(*v))
            })
            .count();
        let want = hits as f64 / with_truth.len() as f64;
        assert!((report.hitrate_at[&k].unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn both_miss_with_growth_is_preferred() {
    let v_x = list(&["a", "b", "c", "d"]);
    let v_rq = list(&["c", "d", "e", "f"]);
    let truth: BTreeSet<String> = ["z".to_owned()].into();
    let v = sys_verdict_from_lists(&v_x, &v_rq, &truth, 50);
    assert_eq!((v.hitrate_x, v.hitrate_rq, v.increment, v.value), (0, 0, 0.5, 1));
}

#[test]
fn two_member_group_advantages() {
    assert_eq!(group_advantages(&[0.0, 1.0]), vec![-1.0, 1.0]);
}

#[test]
fn preference_pairs_equal_exhaustive_enumeration() {
    // Each token retrieves its own videos, so candidate lists are controllable.
    let mut docs = Vec::new();
    for t in ["base", "hit", "wide", "other"] {
        for i in 0..4 {
            docs.push(VideoDoc::new(format!("{t}{i}"), t));
        }
    }
    let index = SearchIndex::build(Arc::new(Corpus::from_docs(docs).unwrap()));
    let truth: BTreeSet<String> = ["hit0".to_owned()].into();
    let x = "base";
    let candidates: Vec<String> = ["base hit", "base wide other", "base", "base wide", "BASE  WIDE"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let ids = |q: &str| -> BTreeSet<String> { index.retrieve_topk(q, 300).ids().map(str::to_owned).collect() };
    let base = ids(x);
    let key = |c: &str| {
        let v = ids(c);
        let hit = u8::from(v.iter().any(|id| truth.contains(id)));
        (hit, v.union(&base).count() as f64 / base.len() as f64 - 1.0)
    };
    let mut want = Vec::new();
    for a in &candidates {
        for b in &candidates {
            let (ka, kb) = (key(a), key(b));
            if (ka.0, ka.1) > (kb.0, kb.1)
                && a.to_lowercase()
                    .split_whitespace()
                    .ne(b.to_lowercase().split_whitespace())
            {
                want.push((a.clone(), b.clone()));
            }
        }
    }
    let got: Vec<(String, String)> = build_preference_pairs(x, &candidates, &index, &truth, 50, 300)
        .into_iter()
        .map(|t| (t.preferred, t.rejected))
        .collect();
    assert_eq!(got, want);
    // "base hit" > "base wide other" > "base wide" ~ "BASE  WIDE" > "base"
    assert_eq!(got.len(), 4 + 3 + 2);

    let three = &candidates[..3];
    assert_eq!(build_preference_pairs(x, three, &index, &truth, 50, 300).len(), 3);
}
