//! Data model and JSONL ingestion for the simulated platform: videos, query
//! logs with engagement events, per-query statistics and curated query sets.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_query;

/// Seven days, the default attribution window for ground truth.
pub const DEFAULT_WINDOW_SECONDS: i64 = 7 * 24 * 3600;
/// Default minimum watch time for a watch event to count as engagement.
pub const DEFAULT_WATCH_THRESHOLD_SECONDS: f64 = 15.0;

#[derive(Debug, Error)]
pub enum CorpusError {
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
    #[error("duplicate video_id {0:?}")]
    DuplicateVideo(String),
    #[error("video {video_id:?} has {count} keyframe refs (max 3)")]
    TooManyKeyframes { video_id: String, count: usize },
    #[error("invalid record: {0}")]
    Invalid(String),
}

/// Metadata of one short video. Missing text fields load as empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDoc {
    pub video_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub ocr_text: String,
    #[serde(default)]
    pub author_name: String,
    #[serde(default)]
    pub bgm_name: String,
    #[serde(default)]
    pub keyframe_refs: Vec<String>,
}

impl VideoDoc {
    pub fn new(video_id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            title: title.into(),
            caption: String::new(),
            ocr_text: String::new(),
            author_name: String::new(),
            bgm_name: String::new(),
            keyframe_refs: Vec::new(),
        }
    }

    /// The five searchable text fields joined with spaces.
    pub fn searchable_text(&self) -> String {
        [
            self.title.as_str(),
            &self.caption,
            &self.ocr_text,
            &self.author_name,
            &self.bgm_name,
        ]
        .join(" ")
    }
}

/// An immutable, id-unique collection of videos.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<VideoDoc>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_docs(docs: Vec<VideoDoc>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.keyframe_refs.len() > 3 {
                return Err(CorpusError::TooManyKeyframes {
                    video_id: doc.video_id.clone(),
                    count: doc.keyframe_refs.len(),
                });
            }
            if by_id.insert(doc.video_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateVideo(doc.video_id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[VideoDoc] {
        &self.docs
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoDoc> {
        self.by_id.get(video_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, video_id: &str) -> bool {
        self.by_id.contains_key(video_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Search,
    Click,
    Watch,
    Reformulate,
}

/// One search-log event. Click and watch events reference a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogRecord {
    pub query: String,
    pub timestamp: i64,
    pub session_id: String,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watch_seconds: Option<f64>,
}

impl QueryLogRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        match self.event {
            EventKind::Click | EventKind::Watch => {
                if self.video_id.is_none() {
                    return Err(CorpusError::Invalid(format!("{:?} event without video_id", self.event)));
                }
            }
            EventKind::Search | EventKind::Reformulate => {
                if self.video_id.is_some() {
                    return Err(CorpusError::Invalid(format!(
                        "{:?} event must not carry a video_id",
                        self.event
                    )));
                }
            }
        }
        match (self.event, self.watch_seconds) {
            (EventKind::Watch, None) => Err(CorpusError::Invalid("watch event without watch_seconds".into())),
            (_, Some(s)) if s.is_nan() || s < 0.0 => {
                Err(CorpusError::Invalid(format!("watch_seconds must be >= 0, got {s}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub query: String,
    pub avg_daily_searches_7d: f64,
    pub is_username_only: bool,
    pub avg_relevance: f64,
    pub ctr: f64,
    pub reformulation_rate: f64,
}

impl QueryStats {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.avg_daily_searches_7d.is_nan() || self.avg_daily_searches_7d < 0.0 {
            return Err(CorpusError::Invalid(format!(
                "avg_daily_searches_7d must be >= 0 for {:?}",
                self.query
            )));
        }
        for (name, v) in [
            ("avg_relevance", self.avg_relevance),
            ("ctr", self.ctr),
            ("reformulation_rate", self.reformulation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::Invalid(format!(
                    "{name} = {v} outside [0,1] for {:?}",
                    self.query
                )));
            }
        }
        Ok(())
    }
}

/// A named, ordered query list with no duplicates after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuerySet {
    pub name: String,
    pub queries: Vec<String>,
}

impl QuerySet {
    /// Keeps the first occurrence of each normalized query; blank queries are dropped.
    pub fn new<I, S>(name: impl Into<String>, queries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let queries = queries
            .into_iter()
            .map(Into::into)
            .filter(|q| {
                let key = normalize_query(q);
                !key.is_empty() && seen.insert(key)
            })
            .collect();
        Self {
            name: name.into(),
            queries,
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

impl<'de> Deserialize<'de> for QuerySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            name: String,
            queries: Vec<String>,
        }
        let raw = Raw::deserialize(d)?;
        Ok(QuerySet::new(raw.name, raw.queries))
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn attach_line(path: &Path, line: usize, err: CorpusError) -> CorpusError {
    match err {
        CorpusError::Invalid(message) => CorpusError::Parse {
            path: path.to_owned(),
            line,
            message,
        },
        other => other,
    }
}

pub fn load_video_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let docs = read_jsonl::<VideoDoc>(path.as_ref())?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    Corpus::from_docs(docs)
}

pub fn load_query_log(path: impl AsRef<Path>) -> Result<Vec<QueryLogRecord>, CorpusError> {
    let path = path.as_ref();
    read_jsonl::<QueryLogRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            rec.validate().map_err(|e| attach_line(path, line, e))?;
            Ok(rec)
        })
        .collect()
}

pub fn load_query_stats(path: impl AsRef<Path>) -> Result<Vec<QueryStats>, CorpusError> {
    let path = path.as_ref();
    read_jsonl::<QueryStats>(path)?
        .into_iter()
        .map(|(line, rec)| {
            rec.validate().map_err(|e| attach_line(path, line, e))?;
            Ok(rec)
        })
        .collect()
}

pub fn load_query_sets(path: impl AsRef<Path>) -> Result<Vec<QuerySet>, CorpusError> {
    Ok(read_jsonl::<QuerySet>(path.as_ref())?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}

/// Writes any serializable records as JSONL.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("records serialize"));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Videos engaged with after the user reformulated `query`.
///
/// A video qualifies when, in the same session, a search for `query` is
/// followed by a reformulate event and then by a click (or a watch of at
/// least `watch_threshold_seconds`), all within `window_seconds` of the
/// search. Events are ordered by timestamp, then by log position.
pub fn ground_truth_set(
    query: &str,
    log: &[QueryLogRecord],
    window_seconds: i64,
    watch_threshold_seconds: f64,
) -> BTreeSet<String> {
    let key = normalize_query(query);
    let mut sessions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, rec) in log.iter().enumerate() {
        sessions.entry(rec.session_id.as_str()).or_default().push(i);
    }

    let mut found = BTreeSet::new();
    for mut events in sessions.into_values() {
        events.sort_by_key(|&i| (log[i].timestamp, i));
        // For each search anchor: has a reformulate been seen since it?
        let mut anchors: Vec<(i64, bool)> = Vec::new();
        for &i in &events {
            let rec = &log[i];
            match rec.event {
                EventKind::Search => {
                    if normalize_query(&rec.query) == key {
                        anchors.push((rec.timestamp, false));
                    }
                }
                EventKind::Reformulate => {
                    for a in &mut anchors {
                        a.1 = true;
                    }
                }
                EventKind::Click | EventKind::Watch => {
                    let engaged =
                        rec.event == EventKind::Click || rec.watch_seconds.unwrap_or(0.0) >= watch_threshold_seconds;
                    let attributed = anchors
                        .iter()
                        .any(|&(t0, reformulated)| reformulated && rec.timestamp - t0 <= window_seconds);
                    if engaged && attributed {
                        if let Some(v) = &rec.video_id {
                            found.insert(v.clone());
                        }
                    }
                }
            }
        }
    }
    found
}
