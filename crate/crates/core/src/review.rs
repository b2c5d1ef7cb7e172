//! Relevance review with provenance-tracked excerpts, and cited synthesis.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, TemplateKind, Templates};
use crate::ids::ChunkId;
use crate::ingest::{Corpus, PaperRecord};
use crate::keywords::KeywordSet;
use crate::prompt;

pub const RELEVANCE_THRESHOLD: f64 = 0.5;
pub const REVIEW_BATCH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ReviewError {
    #[error("no papers to review")]
    EmptyInput,
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error("could not parse review response: {0}")]
    ReviewParse(String),
    #[error("no accepted or relevant paper to synthesize from")]
    NothingToSynthesize,
    #[error("citation [{marker}] does not resolve to a chunk")]
    CitationUnresolved { marker: usize },
    #[error("citation [{marker}] cites rejected paper {arxiv_id}")]
    CitesRejected { marker: usize, arxiv_id: String },
    #[error("no verdict for paper {0}")]
    UnknownPaper(String),
    #[error("chunk {chunk_id} does not match its abstract span")]
    ChunkIntegrity { chunk_id: ChunkId },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserState {
    #[default]
    Neutral,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayState {
    Green,
    Red,
    Blue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub arxiv_id: String,
    pub relevance_score: f64,
    pub agent_rationale: String,
    #[serde(default)]
    pub user_state: UserState,
    /// Set when an excerpt was dropped or a relevant paper came without one.
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Colour of a paper glyph. Only the user's decision matters; the agent
/// score is hover metadata.
pub fn display_state(verdict: &ReviewVerdict) -> DisplayState {
    match verdict.user_state {
        UserState::Accepted => DisplayState::Green,
        UserState::Rejected => DisplayState::Red,
        UserState::Neutral => DisplayState::Blue,
    }
}

/// Half-open interval of character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: ChunkId,
    pub arxiv_id: String,
    pub span: Span,
    pub text: String,
}

/// The substring of `text` covering character offsets `span`, if in range.
pub fn char_slice(text: &str, span: Span) -> Option<&str> {
    if span.start >= span.end {
        return None;
    }
    let mut bounds = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let start = bounds.nth(span.start)?;
    let end = bounds.nth(span.end - span.start - 1)?;
    Some(&text[start..end])
}

impl Chunk {
    /// Locates `excerpt` verbatim in `abstract_text`; `None` when absent.
    pub fn locate(arxiv_id: &str, abstract_text: &str, excerpt: &str) -> Option<Chunk> {
        if excerpt.is_empty() {
            return None;
        }
        let byte = abstract_text.find(excerpt)?;
        let start = abstract_text[..byte].chars().count();
        let end = start + excerpt.chars().count();
        Some(Chunk {
            chunk_id: ChunkId::for_span(arxiv_id, start, end),
            arxiv_id: arxiv_id.to_owned(),
            span: Span { start, end },
            text: excerpt.to_owned(),
        })
    }

    pub fn verify(&self, abstract_text: &str) -> bool {
        char_slice(abstract_text, self.span) == Some(self.text.as_str())
            && self.chunk_id == ChunkId::for_span(&self.arxiv_id, self.span.start, self.span.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewResult {
    pub verdicts: Vec<ReviewVerdict>,
    pub chunks: Vec<Chunk>,
}

impl ReviewResult {
    pub fn verdict(&self, arxiv_id: &str) -> Option<&ReviewVerdict> {
        self.verdicts.iter().find(|v| v.arxiv_id == arxiv_id)
    }

    /// Every chunk must belong to a reviewed paper in `corpus` and slice its
    /// abstract exactly.
    pub fn verify(&self, corpus: &Corpus) -> Result<(), ReviewError> {
        let reviewed: BTreeSet<&str> = self.verdicts.iter().map(|v| v.arxiv_id.as_str()).collect();
        for c in &self.chunks {
            let ok = reviewed.contains(c.arxiv_id.as_str())
                && corpus.get(&c.arxiv_id).is_some_and(|p| c.verify(&p.abstract_text));
            if !ok {
                return Err(ReviewError::ChunkIntegrity {
                    chunk_id: c.chunk_id.clone(),
                });
            }
        }
        for v in &self.verdicts {
            if !(0.0..=1.0).contains(&v.relevance_score) {
                return Err(ReviewError::ReviewParse(format!("score of {} out of range", v.arxiv_id)));
            }
        }
        Ok(())
    }

    /// Copy with each verdict's user state taken from `states` (Neutral when
    /// absent).
    pub fn with_user_states(&self, states: &BTreeMap<String, UserState>) -> ReviewResult {
        let mut out = self.clone();
        for v in &mut out.verdicts {
            v.user_state = states.get(&v.arxiv_id).copied().unwrap_or_default();
        }
        out
    }
}

fn review_prompt(templates: &Templates, query: &str, keywords: &KeywordSet, batch: &[&PaperRecord]) -> (String, String) {
    let t = templates.get(TemplateKind::Review);
    let blocks: String = batch
        .iter()
        .map(|p| prompt::paper_block(&p.arxiv_id, &p.title, &p.abstract_text))
        .collect::<Vec<_>>()
        .join("\n");
    let kws = prompt::keywords(keywords);
    let user = t.render(&[("query", query), ("keywords", &kws), ("abstracts", &blocks)]);
    (t.system.clone(), user)
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    let s = s.strip_prefix(['"', '\u{201c}']).unwrap_or(s);
    s.strip_suffix(['"', '\u{201d}']).unwrap_or(s)
}

/// Parses `id | score | rationale | "excerpt" | ...` lines for one batch.
///
/// Lines for ids outside the batch are ignored and the first line per id
/// wins; every paper of the batch must be covered.
pub fn parse_review(text: &str, batch: &[&PaperRecord], threshold: f64) -> Result<ReviewResult, ReviewError> {
    let mut by_id: BTreeMap<&str, (ReviewVerdict, Vec<Chunk>)> = BTreeMap::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() < 3 {
            continue;
        }
        let id = fields[0].trim_start_matches("[paper ").trim_end_matches(']').trim();
        let Some(paper) = batch.iter().find(|p| p.arxiv_id == id) else {
            continue;
        };
        if by_id.contains_key(paper.arxiv_id.as_str()) {
            continue;
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| ReviewError::ReviewParse(format!("score {:?} for {id} is not a number", fields[1])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ReviewError::ReviewParse(format!("score {score} for {id} outside [0, 1]")));
        }
        let mut warnings = Vec::new();
        let mut chunks: Vec<Chunk> = Vec::new();
        for raw in &fields[3..] {
            let excerpt = unquote(raw);
            if excerpt.is_empty() {
                continue;
            }
            match Chunk::locate(&paper.arxiv_id, &paper.abstract_text, excerpt) {
                Some(c) if !chunks.iter().any(|x| x.chunk_id == c.chunk_id) => chunks.push(c),
                Some(_) => {}
                None => warnings.push(format!("excerpt not found verbatim in abstract: {excerpt:?}")),
            }
        }
        if score >= threshold && chunks.is_empty() {
            warnings.push("relevant paper has no verifiable excerpt".to_owned());
        }
        let verdict = ReviewVerdict {
            arxiv_id: paper.arxiv_id.clone(),
            relevance_score: score,
            agent_rationale: fields[2].to_owned(),
            user_state: UserState::Neutral,
            warnings,
        };
        by_id.insert(paper.arxiv_id.as_str(), (verdict, chunks));
    }
    let mut out = ReviewResult::default();
    for p in batch {
        let (v, c) = by_id
            .remove(p.arxiv_id.as_str())
            .ok_or_else(|| ReviewError::ReviewParse(format!("no verdict for {}", p.arxiv_id)))?;
        out.verdicts.push(v);
        out.chunks.extend(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReviewOptions {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for ReviewOptions {
    fn default() -> Self {
        Self {
            threshold: RELEVANCE_THRESHOLD,
            batch_size: REVIEW_BATCH,
        }
    }
}

/// Reviews `papers` in batches, one completion per batch. Verdicts and chunks
/// come back in input order.
pub fn review_papers(
    gateway: &Gateway,
    templates: &Templates,
    query: &str,
    keywords: &KeywordSet,
    papers: &[&PaperRecord],
    options: ReviewOptions,
) -> Result<ReviewResult, ReviewError> {
    if papers.is_empty() {
        return Err(ReviewError::EmptyInput);
    }
    let mut out = ReviewResult::default();
    for batch in papers.chunks(options.batch_size.max(1)) {
        let (system, user) = review_prompt(templates, query, keywords, batch);
        let resp = gateway.complete(&gateway.request(system, user))?;
        let part = parse_review(&resp.text, batch, options.threshold)?;
        out.verdicts.extend(part.verdicts);
        out.chunks.extend(part.chunks);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub marker: usize,
    pub chunk_id: ChunkId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub body: String,
    /// One entry per marker occurrence, in body order.
    pub citations: Vec<Citation>,
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").unwrap())
}

/// Every `[n]` marker in `body`, in order of appearance.
pub fn markers(body: &str) -> Vec<usize> {
    marker_re()
        .captures_iter(body)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

/// Papers whose chunks go into the synthesis prompt: the accepted ones, or
/// without any acceptance the non-rejected ones scoring at least `threshold`.
pub fn eligible_papers(review: &ReviewResult, threshold: f64) -> BTreeSet<String> {
    let accepted: BTreeSet<String> = review
        .verdicts
        .iter()
        .filter(|v| v.user_state == UserState::Accepted)
        .map(|v| v.arxiv_id.clone())
        .collect();
    if !accepted.is_empty() {
        return accepted;
    }
    review
        .verdicts
        .iter()
        .filter(|v| v.user_state != UserState::Rejected && v.relevance_score >= threshold)
        .map(|v| v.arxiv_id.clone())
        .collect()
}

/// Builds a report from a response body. Markers number all chunks of the
/// review from 1 in review order, which keeps numbers stable when user
/// decisions change the prompt's selection.
pub fn resolve_citations(body: &str, review: &ReviewResult) -> Result<SynthesisReport, ReviewError> {
    let mut citations = Vec::new();
    for marker in markers(body) {
        let chunk = marker
            .checked_sub(1)
            .and_then(|i| review.chunks.get(i))
            .ok_or(ReviewError::CitationUnresolved { marker })?;
        let rejected = review
            .verdict(&chunk.arxiv_id)
            .is_some_and(|v| v.user_state == UserState::Rejected);
        if rejected {
            return Err(ReviewError::CitesRejected {
                marker,
                arxiv_id: chunk.arxiv_id.clone(),
            });
        }
        citations.push(Citation {
            marker,
            chunk_id: chunk.chunk_id.clone(),
        });
    }
    Ok(SynthesisReport {
        body: body.trim().to_owned(),
        citations,
    })
}

/// Runs the synthesis completion. `review` must already carry the current
/// user states.
pub fn synthesize(
    gateway: &Gateway,
    templates: &Templates,
    query: &str,
    keywords: &KeywordSet,
    review: &ReviewResult,
    threshold: f64,
) -> Result<SynthesisReport, ReviewError> {
    let eligible = eligible_papers(review, threshold);
    if eligible.is_empty() {
        return Err(ReviewError::NothingToSynthesize);
    }
    let context: String = review
        .chunks
        .iter()
        .enumerate()
        .filter(|(_, c)| eligible.contains(&c.arxiv_id))
        .map(|(i, c)| prompt::chunk_line(i + 1, &c.arxiv_id, &c.text))
        .collect();
    let t = templates.get(TemplateKind::Synthesis);
    let kws = prompt::keywords(keywords);
    let user = t.render(&[("query", query), ("keywords", &kws), ("abstracts", &context)]);
    let resp = gateway.complete(&gateway.request(t.system.clone(), user))?;
    resolve_citations(&resp.text, review)
}
