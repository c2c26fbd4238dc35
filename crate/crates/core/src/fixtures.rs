//! Seeded synthetic scenario of a misspelled creator query: users type the
//! beverage brand "Coca-Cola" while looking for the drama series of the
//! creator "Coco-Cola". The original query retrieves only beverage videos;
//! the creator's videos are reachable through a mined similar query, which
//! the scripted card and rewrite clients turn into a corrected rewrite.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, EventKind, QueryLogRecord, QuerySet, VideoDoc};
use crate::generation::ScriptedClient;
use crate::pipeline::{GroundTruth, ManualClock, Pipeline};
use crate::search::SearchIndex;

pub const TYPO_QUERY: &str = "Coca-Cola The Fostered Children";
pub const TYPO_REWRITE: &str = "Coco-Cola foster drama";
pub const TYPO_CREATOR: &str = "Coco-Cola";
pub const FIXTURE_EPOCH: i64 = 1_700_000_000;

const CARD_DESC: &str = "Looking for the foster-family short drama series by creator Coco-Cola; \
\"Coca-Cola\" is a misspelling of the creator's name, not the beverage.";

const FILLER_TOPICS: [&str; 8] = [
    "pasta", "hiking", "puppy", "guitar", "yoga", "garden", "chess", "bakery",
];
const FILLER_WORDS: [&str; 12] = [
    "tutorial",
    "vlog",
    "tips",
    "beginner",
    "weekend",
    "easy",
    "review",
    "quick",
    "morning",
    "diary",
    "guide",
    "challenge",
];
const FILLER_AUTHORS: [&str; 5] = ["Mia Cooks", "TrailFox", "PawPals", "StrumDaily", "Zen Lab"];

#[derive(Debug, Clone)]
pub struct CreatorTypoFixture {
    pub query: String,
    pub corpus: Arc<Corpus>,
    pub index: Arc<SearchIndex>,
    pub log: Arc<Vec<QueryLogRecord>>,
    pub good1: QuerySet,
    pub good2: QuerySet,
    /// Creator videos engaged with after reformulation.
    pub ground_truth_ids: Vec<String>,
    pub card_client: Arc<ScriptedClient>,
    pub rewrite_client: Arc<ScriptedClient>,
}

impl CreatorTypoFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = vec![
            beverage("bev-1", "Coca-Cola zero sugar taste test", "SodaCritic"),
            beverage("bev-2", "Coca-Cola glass bottle unboxing", "RetroCans"),
        ];
        let episodes = [
            "Coco-Cola foster drama ep1 new home",
            "Coco-Cola foster drama ep2 first school day",
            "Coco-Cola foster drama ep3 siblings reunite",
            "Coco-Cola foster drama ep4 finale",
        ];
        for (i, title) in episodes.iter().enumerate() {
            let mut d = VideoDoc::new(format!("cc-{}", i + 1), *title);
            d.author_name = TYPO_CREATOR.into();
            d.ocr_text = format!("foster drama episode {}", i + 1);
            d.bgm_name = "Warm Piano".into();
            d.keyframe_refs = (0..3).map(|f| format!("frames/cc-{}/{f}.jpg", i + 1)).collect();
            docs.push(d);
        }
        for i in 0..60 {
            let topic = FILLER_TOPICS.choose(&mut rng).expect("non-empty");
            let words: Vec<&str> = FILLER_WORDS.choose_multiple(&mut rng, 2).copied().collect();
            let mut d = VideoDoc::new(format!("fill-{i:02}"), format!("{topic} {} {}", words[0], words[1]));
            d.author_name = FILLER_AUTHORS.choose(&mut rng).expect("non-empty").to_string();
            d.ocr_text = format!("{topic} {}", rng.gen_range(1..100));
            docs.push(d);
        }
        docs.shuffle(&mut rng);
        let corpus = Arc::new(Corpus::from_docs(docs).expect("fixture ids are unique"));
        let index = Arc::new(SearchIndex::build(corpus.clone()));

        let ground_truth_ids: Vec<String> = vec!["cc-1".into(), "cc-2".into(), "cc-3".into()];
        let log = Arc::new(engagement_log(&ground_truth_ids));

        let card_client = Arc::new(ScriptedClient::new("fixture-card").on(
            format!("Author Name: {TYPO_CREATOR}"),
            serde_json::json!({ "desc": CARD_DESC }).to_string(),
        ));
        let rewrite_client = Arc::new(
            ScriptedClient::new("fixture-rewrite")
                .on(
                    "series by creator Coco-Cola",
                    serde_json::json!({ "RewriteQuery": TYPO_REWRITE }).to_string(),
                )
                .otherwise(serde_json::json!({ "RewriteQuery": TYPO_QUERY }).to_string()),
        );

        Self {
            query: TYPO_QUERY.into(),
            corpus,
            index,
            log,
            good1: QuerySet::new("good1", ["coca-cola zero sugar", "pasta tutorial"]),
            good2: QuerySet::new("good2", ["coco-cola foster drama", "puppy tips", "chess guide"]),
            ground_truth_ids,
            card_client,
            rewrite_client,
        }
    }

    /// Pipeline wired with the fixture's sets, scripted clients, log-derived
    /// ground truth and a fixed clock.
    pub fn pipeline(&self) -> Pipeline {
        Pipeline::builder(self.index.clone())
            .good_sets(self.good1.clone(), self.good2.clone())
            .card_client(self.card_client.clone())
            .rewrite_client(self.rewrite_client.clone())
            .ground_truth(GroundTruth::from_log(self.log.clone()))
            .clock(Arc::new(ManualClock::new(FIXTURE_EPOCH)))
            .build()
    }
}

impl Default for CreatorTypoFixture {
    fn default() -> Self {
        Self::new(7)
    }
}

fn beverage(id: &str, title: &str, author: &str) -> VideoDoc {
    let mut d = VideoDoc::new(id, title);
    d.author_name = author.into();
    d.bgm_name = "Fizz Beat".into();
    d
}

/// Users search the misspelled query, reformulate, then engage with the
/// creator's episodes.
fn engagement_log(ids: &[String]) -> Vec<QueryLogRecord> {
    let rec = |session: usize, t: i64, query: &str, event, video: Option<&str>, watch| QueryLogRecord {
        query: query.into(),
        timestamp: FIXTURE_EPOCH - 86_400 + t,
        session_id: format!("s{session}"),
        event,
        video_id: video.map(str::to_owned),
        watch_seconds: watch,
    };
    let mut log = Vec::new();
    for (s, id) in ids.iter().enumerate() {
        let base = s as i64 * 1000;
        log.push(rec(s, base, TYPO_QUERY, EventKind::Search, None, None));
        log.push(rec(s, base + 20, TYPO_REWRITE, EventKind::Reformulate, None, None));
        log.push(rec(s, base + 30, TYPO_REWRITE, EventKind::Click, Some(id), None));
        log.push(rec(s, base + 31, TYPO_REWRITE, EventKind::Watch, Some(id), Some(45.0)));
    }
    log
}
