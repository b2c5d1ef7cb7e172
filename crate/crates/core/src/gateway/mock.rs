//! Deterministic offline providers.
//!
//! [`MockChat`] answers from a table keyed by [`ChatRequest::content_hash`],
//! optionally falling back to a pure responder function. [`agent_responder`]
//! is such a function: it reads the sections laid out by [`crate::prompt`] and
//! produces well-formed answers for every builtin template.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, ProviderFailure};
use crate::keywords::KeywordSet;
use crate::prompt;

pub type Responder = Arc<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

pub(crate) fn seed_of(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Default)]
pub struct MockChat {
    fixtures: HashMap<String, String>,
    responder: Option<Responder>,
    fail_next: AtomicU32,
    failing: AtomicBool,
    calls: Arc<AtomicUsize>,
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    /// A mock answering every builtin template via [`agent_responder`].
    pub fn agent() -> Self {
        Self::new().with_responder(agent_responder())
    }

    pub fn with_fixture(mut self, req: &ChatRequest, text: impl Into<String>) -> Self {
        self.fixtures.insert(req.content_hash(), text.into());
        self
    }

    pub fn with_hash_fixture(mut self, hash: impl Into<String>, text: impl Into<String>) -> Self {
        self.fixtures.insert(hash.into(), text.into());
        self
    }

    pub fn with_responder(mut self, responder: Responder) -> Self {
        self.responder = Some(responder);
        self
    }

    /// The next `n` calls fail transiently.
    pub fn fail_next(&self, n: u32) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    /// While set, every call fails transiently.
    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }

    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl ChatProvider for MockChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.failing.load(Ordering::SeqCst) {
            return Err(ProviderFailure::Transient("mock provider configured to fail".into()));
        }
        if self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(ProviderFailure::Transient("mock provider configured to fail".into()));
        }
        let hash = req.content_hash();
        let text = self
            .fixtures
            .get(&hash)
            .cloned()
            .or_else(|| self.responder.as_ref().and_then(|r| r(req)))
            .ok_or_else(|| ProviderFailure::Permanent(format!("no mock fixture for request {hash}")))?;
        Ok(ChatResponse {
            prompt_tokens: (req.system_prompt.len() + req.user_prompt.len()) as u32 / 4,
            completion_tokens: text.len() as u32 / 4,
            text,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MockEmbedding {
    /// One pseudo-random unit vector seeded by the hash of the whole text.
    #[default]
    HashSeeded,
    /// Normalized sum of per-word pseudo-random vectors, so texts sharing
    /// vocabulary land near each other.
    BagOfWords,
}

pub struct MockEmbedder {
    dim: usize,
    mode: MockEmbedding,
    failing: AtomicBool,
    batches: Mutex<Vec<usize>>,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "how", "in", "is", "it", "of",
    "on", "or", "that", "the", "this", "to", "we", "with", "our", "its", "their", "which", "can",
];

pub(crate) fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.len() > 1 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn unit_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self::with_mode(dim, MockEmbedding::HashSeeded)
    }

    pub fn with_mode(dim: usize, mode: MockEmbedding) -> Self {
        Self {
            dim,
            mode,
            failing: AtomicBool::new(false),
            batches: Mutex::new(Vec::new()),
        }
    }

    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.lock().clone()
    }

    pub fn vector_for(&self, text: &str, model_id: &str) -> Vec<f64> {
        match self.mode {
            MockEmbedding::HashSeeded => unit_vector(seed_of(&[model_id, text]), self.dim),
            MockEmbedding::BagOfWords => {
                let words = content_words(text);
                if words.is_empty() {
                    return unit_vector(seed_of(&[model_id, text]), self.dim);
                }
                let mut acc = vec![0.0; self.dim];
                for w in &words {
                    for (a, x) in acc.iter_mut().zip(unit_vector(seed_of(&[model_id, w]), self.dim)) {
                        *a += x;
                    }
                }
                normalize(&mut acc);
                acc
            }
        }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        if self.failing.load(Ordering::SeqCst) {
            return Err(ProviderFailure::Transient("mock embedder configured to fail".into()));
        }
        self.batches.lock().push(texts.len());
        Ok(texts.iter().map(|t| self.vector_for(t, model_id)).collect())
    }
}

/// Directions the mock agent proposes, matching topics in the synthetic
/// arXiv pool.
const DIRECTIONS: &[(&str, &str)] = &[
    ("Evaluation benchmarks", "evaluation benchmarks"),
    ("Saliency maps", "saliency maps"),
    ("Interface design", "interface design"),
    ("Interactive steering", "interactive steering generative"),
    ("Bias detection", "bias detection visual analytics"),
    ("Uncertainty communication", "uncertainty visualization"),
    ("Embedding projection", "embedding projection"),
    ("Provenance tracking", "provenance tracking"),
];

/// Answers requests built from the builtin templates. The dispatch key is the
/// `Role: <task>` prefix of the system prompt.
pub fn agent_responder() -> Responder {
    Arc::new(|req: &ChatRequest| {
        let role = req.system_prompt.strip_prefix("Role: ")?.split('.').next()?;
        let user = req.user_prompt.as_str();
        Some(match role {
            "query-expansion" => expand(prompt::read_line_value(user, prompt::QUERY_LINE)?),
            "relevance-review" => review(user),
            "synthesis" => synthesize(user),
            "direction-proposal" => propose(user),
            _ => return None,
        })
    })
}

fn expand(query: &str) -> String {
    let mut kws: KeywordSet = content_words(query).iter().collect();
    if kws.is_empty() {
        kws.insert(query);
    }
    kws.iter().collect::<Vec<_>>().join("\n")
}

fn first_sentence(text: &str) -> &str {
    match text.find(". ") {
        Some(i) => &text[..=i],
        None => text,
    }
}

fn review(user: &str) -> String {
    let keywords: Vec<String> = prompt::read_line_value(user, prompt::KEYWORDS_LINE)
        .unwrap_or("")
        .split(',')
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    let query = prompt::read_line_value(user, prompt::QUERY_LINE).unwrap_or("");
    let mut lines = Vec::new();
    for p in prompt::read_paper_blocks(user) {
        let hay = format!("{} {}", p.title, p.abstract_text).to_lowercase();
        let hits: Vec<&String> = keywords.iter().filter(|k| hay.contains(k.as_str())).collect();
        let overlap = if keywords.is_empty() {
            0.0
        } else {
            hits.len() as f64 / keywords.len() as f64
        };
        let jitter = (seed_of(&[query, &p.arxiv_id]) % 11) as f64 / 100.0 - 0.05;
        let score = ((0.2 + 0.7 * overlap + jitter).clamp(0.0, 1.0) * 100.0).round() / 100.0;
        let rationale = if hits.is_empty() {
            "Does not mention any of the search keywords.".to_owned()
        } else {
            let named: Vec<&str> = hits.iter().map(|s| s.as_str()).collect();
            format!("Addresses {}.", named.join(" and "))
        };
        let mut line = format!("{} | {score:.2} | {rationale}", p.arxiv_id);
        if score >= 0.5 {
            line.push_str(&format!(" | \"{}\"", first_sentence(&p.abstract_text)));
        }
        lines.push(line);
    }
    lines.join("\n")
}

fn synthesize(user: &str) -> String {
    let query = prompt::read_line_value(user, prompt::QUERY_LINE).unwrap_or("the topic");
    let chunks = prompt::read_chunk_lines(user);
    if chunks.is_empty() {
        return format!("No citable evidence was available for {query}.");
    }
    let mut body = format!("Evidence on {query} clusters around a few threads.");
    for (marker, id, _) in chunks.iter().take(4) {
        body.push_str(&format!(" Paper {id} contributes a directly relevant finding [{marker}]."));
    }
    body.push_str("\n\nOpen gaps remain in how these findings are evaluated with end users.");
    body
}

fn propose(user: &str) -> String {
    let query = prompt::read_line_value(user, prompt::CURRENT_QUERY_LINE).unwrap_or("");
    let current = query.to_lowercase();
    let start = (seed_of(&[query]) % DIRECTIONS.len() as u64) as usize;
    (0..DIRECTIONS.len())
        .map(|i| DIRECTIONS[(start + i) % DIRECTIONS.len()])
        .filter(|(_, seed)| !current.contains(seed))
        .take(3)
        .map(|(title, seed)| {
            format!("{title} | Several reviewed papers touch on {} without studying it directly. | {seed}", title.to_lowercase())
        })
        .collect::<Vec<_>>()
        .join("\n")
}
