//! arXiv retrieval: query construction, Atom parsing and the session corpus.

mod atom;
mod client;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::TreeNodeId;
use crate::keywords::KeywordSet;

pub use atom::parse_atom;
pub use client::{
    ArxivClient, CancelToken, FixtureTransport, HttpTransport, RateLimiter, Transport,
    TransportResponse, ARXIV_QUERY_URL, MIN_REQUEST_GAP,
};
pub use synthetic::{SyntheticArxiv, SYNTHETIC_POOL};

pub const DEFAULT_MAX_RESULTS: u32 = 25;
pub const MAX_RESULTS_LIMIT: u32 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IngestError {
    #[error("keyword set is empty")]
    EmptyKeywordSet,
    #[error("invalid search spec: {0}")]
    InvalidSpec(String),
    #[error("HTTP error: {0}")]
    HttpError(String),
    #[error("feed parse error: {0}")]
    FeedParse(String),
    #[error("rate-limited request was cancelled")]
    RateLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    #[default]
    Relevance,
    SubmittedDate,
}

impl SortOrder {
    pub fn as_param(self) -> &'static str {
        match self {
            SortOrder::Relevance => "relevance",
            SortOrder::SubmittedDate => "submittedDate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpec {
    keywords: KeywordSet,
    max_results: u32,
    start: u32,
    sort: SortOrder,
}

impl SearchSpec {
    pub fn new(
        keywords: KeywordSet,
        max_results: u32,
        start: u32,
        sort: SortOrder,
    ) -> Result<Self, IngestError> {
        if keywords.is_empty() {
            return Err(IngestError::EmptyKeywordSet);
        }
        if !(1..=MAX_RESULTS_LIMIT).contains(&max_results) {
            return Err(IngestError::InvalidSpec(format!(
                "max_results {max_results} outside 1..={MAX_RESULTS_LIMIT}"
            )));
        }
        Ok(Self {
            keywords,
            max_results,
            start,
            sort,
        })
    }

    pub fn keywords(&self) -> &KeywordSet {
        &self.keywords
    }

    pub fn max_results(&self) -> u32 {
        self.max_results
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn sort(&self) -> SortOrder {
        self.sort
    }
}

/// `all:"k1" AND all:"k2"` over the normalized keywords in lexicographic order.
pub fn build_query<S: AsRef<str>>(keywords: &[S]) -> Result<String, IngestError> {
    if keywords.is_empty() || keywords.iter().any(|k| k.as_ref().trim().is_empty()) {
        return Err(IngestError::EmptyKeywordSet);
    }
    let set: KeywordSet = keywords.iter().map(|k| k.as_ref()).collect();
    Ok(query_for(&set))
}

pub(crate) fn query_for(set: &KeywordSet) -> String {
    set.iter()
        .map(|k| format!("all:\"{k}\""))
        .collect::<Vec<_>>()
        .join(" AND ")
}

pub fn abs_url(arxiv_id: &str) -> String {
    format!("https://arxiv.org/abs/{arxiv_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub arxiv_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub published: DateTime<Utc>,
    pub updated: DateTime<Utc>,
    pub primary_category: String,
    pub abs_url: String,
    #[serde(default)]
    pub iteration_tags: BTreeSet<TreeNodeId>,
}

impl PaperRecord {
    pub fn year(&self) -> i32 {
        use chrono::Datelike;
        self.published.year()
    }
}

/// Papers of one session keyed by arXiv id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Corpus(BTreeMap<String, PaperRecord>);

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, arxiv_id: &str) -> Option<&PaperRecord> {
        self.0.get(arxiv_id)
    }

    pub fn contains(&self, arxiv_id: &str) -> bool {
        self.0.contains_key(arxiv_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PaperRecord> {
        self.0.values()
    }

    /// Known ids union their iteration tags and keep the metadata with the
    /// newest `updated` date; unknown ids are inserted.
    pub fn merge(&mut self, records: impl IntoIterator<Item = PaperRecord>) {
        for rec in records {
            match self.0.get_mut(&rec.arxiv_id) {
                Some(existing) => {
                    let mut tags = std::mem::take(&mut existing.iteration_tags);
                    tags.extend(rec.iteration_tags.iter().cloned());
                    if rec.updated >= existing.updated {
                        *existing = rec;
                    }
                    existing.iteration_tags = tags;
                }
                None => {
                    self.0.insert(rec.arxiv_id.clone(), rec);
                }
            }
        }
    }
}

pub fn merge_into_corpus(mut corpus: Corpus, records: Vec<PaperRecord>) -> Corpus {
    corpus.merge(records);
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rec(id: &str, tag: &str, day: u32) -> PaperRecord {
        let t = Utc.with_ymd_and_hms(2024, 1, day, 0, 0, 0).unwrap();
        PaperRecord {
            arxiv_id: id.into(),
            title: format!("title {day}"),
            abstract_text: "abstract".into(),
            authors: vec!["A".into()],
            published: t,
            updated: t,
            primary_category: "cs.HC".into(),
            abs_url: abs_url(id),
            iteration_tags: [TreeNodeId::from(tag)].into(),
        }
    }

    #[test]
    fn query_building_rules() {
        assert_eq!(build_query(&["layout", "Graph"]).unwrap(), r#"all:"graph" AND all:"layout""#);
        assert_eq!(build_query(&["saliency maps"]).unwrap(), r#"all:"saliency maps""#);
        assert_eq!(build_query::<&str>(&[]).unwrap_err(), IngestError::EmptyKeywordSet);
        assert_eq!(build_query(&["ok", "  "]).unwrap_err(), IngestError::EmptyKeywordSet);
    }

    #[test]
    fn search_spec_ranges() {
        let kws: KeywordSet = ["x"].into_iter().collect();
        assert!(SearchSpec::new(kws.clone(), 0, 0, SortOrder::Relevance).is_err());
        assert!(SearchSpec::new(kws.clone(), 101, 0, SortOrder::Relevance).is_err());
        assert!(SearchSpec::new(kws, 100, 0, SortOrder::SubmittedDate).is_ok());
        assert_eq!(
            SearchSpec::new(KeywordSet::new(), 5, 0, SortOrder::Relevance).unwrap_err(),
            IngestError::EmptyKeywordSet
        );
    }

    #[test]
    fn merge_unions_tags_and_keeps_newest() {
        let corpus = merge_into_corpus(Corpus::new(), vec![rec("1", "A", 1)]);
        let corpus = merge_into_corpus(corpus, vec![rec("1", "B", 5)]);
        assert_eq!(corpus.len(), 1);
        let p = corpus.get("1").unwrap();
        assert_eq!(p.iteration_tags, [TreeNodeId::from("A"), TreeNodeId::from("B")].into());
        assert_eq!(p.title, "title 5");
        let older = merge_into_corpus(corpus.clone(), vec![rec("1", "C", 2)]);
        assert_eq!(older.get("1").unwrap().title, "title 5");
        assert_eq!(older.get("1").unwrap().iteration_tags.len(), 3);

        let disjoint = merge_into_corpus(corpus.clone(), vec![rec("2", "A", 1), rec("3", "A", 1)]);
        assert_eq!(disjoint.len(), 3);
        assert_eq!(merge_into_corpus(corpus.clone(), vec![]), corpus);
    }
}
