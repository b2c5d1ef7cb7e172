//! Provider-agnostic access to chat completion and text embedding.
//!
//! A [`Gateway`] wraps one [`ChatProvider`] and one [`EmbeddingProvider`]
//! with the retry policy, embedding batch splitting and an in-flight request
//! limiter. Providers only report whether a failure is worth retrying.

mod mock;
mod openai;
mod templates;

use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::clock::{Clock, SystemClock};

pub use mock::{agent_responder, MockChat, MockEmbedder, MockEmbedding, Responder};
pub(crate) use mock::seed_of;
pub use openai::OpenAiCompatible;
pub use templates::{PromptTemplate, TemplateError, TemplateKind, Templates};

pub const DEFAULT_EMBED_BATCH: usize = 64;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const MAX_RETRIES_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user_prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the request content. Mock fixtures are keyed by this.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.model_id, &self.system_prompt, &self.user_prompt] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update(self.max_output_tokens.to_le_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Self {
        Self {
            values,
            model_id: model_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub base_url: Url,
    /// Name of the environment variable holding the API key.
    pub api_key_source: String,
    pub chat_model_id: String,
    pub embedding_model_id: String,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub request_timeout: Duration,
    pub embed_batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: Url::parse("https://api.openai.com/v1/").unwrap(),
            api_key_source: "LLM_API_KEY".into(),
            chat_model_id: "gpt-5-mini".into(),
            embedding_model_id: "text-embedding-3-small".into(),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            request_timeout: DEFAULT_TIMEOUT,
            embed_batch_size: DEFAULT_EMBED_BATCH,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl ProviderConfig {
    /// Reads `LLM_BASE_URL`, `LLM_CHAT_MODEL` and `LLM_EMBED_MODEL`; anything
    /// unset keeps its default. The key itself is read lazily from
    /// `api_key_source` by the HTTP provider.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut cfg = Self::default();
        if let Ok(base) = std::env::var("LLM_BASE_URL") {
            cfg.base_url = Url::parse(&base)
                .map_err(|e| GatewayError::InvalidRequest(format!("LLM_BASE_URL: {e}")))?;
        }
        if let Ok(m) = std::env::var("LLM_CHAT_MODEL") {
            cfg.chat_model_id = m;
        }
        if let Ok(m) = std::env::var("LLM_EMBED_MODEL") {
            cfg.embedding_model_id = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(GatewayError::InvalidRequest(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.embed_batch_size == 0 || self.max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest(
                "batch size and in-flight limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Failure reported by a provider implementation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderFailure {
    /// Network errors, timeouts, 429 and 5xx; retried.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// Authorization and malformed-request errors; not retried.
    #[error("provider failure: {0}")]
    Permanent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding batch is empty")]
    EmptyBatch,
    #[error("provider error after {attempts} attempt(s): {message}")]
    ProviderError { message: String, attempts: u32 },
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderFailure>;
}

/// Counting semaphore bounding concurrent provider requests.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock();
        while *n == 0 {
            self.freed.wait(&mut n);
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    config: ProviderConfig,
    clock: Arc<dyn Clock>,
    limiter: Limiter,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        config: ProviderConfig,
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let limiter = Limiter::new(config.max_in_flight);
        Ok(Self {
            chat,
            embedder,
            config,
            clock,
            limiter,
        })
    }

    /// Gateway over an OpenAI-compatible HTTP endpoint.
    pub fn http(config: ProviderConfig) -> Result<Self, GatewayError> {
        let provider = Arc::new(OpenAiCompatible::new(&config)?);
        Self::new(config, provider.clone(), provider, Arc::new(SystemClock))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// A request for the configured chat model.
    pub fn request(&self, system_prompt: String, user_prompt: String) -> ChatRequest {
        ChatRequest {
            system_prompt,
            user_prompt,
            temperature: 0.2,
            max_output_tokens: 2048,
            model_id: self.config.chat_model_id.clone(),
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let resp = self.with_retries(|| {
            let _permit = self.limiter.acquire();
            self.chat.chat(req)
        })?;
        if resp.text.trim().is_empty() {
            return Err(GatewayError::ProviderError {
                message: "provider returned empty text".into(),
                attempts: 1,
            });
        }
        Ok(resp)
    }

    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyText { index });
        }
        let model = &self.config.embedding_model_id;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.embed_batch_size) {
            let vectors = self.with_retries(|| {
                let _permit = self.limiter.acquire();
                self.embedder.embed(batch, model)
            })?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::ProviderError {
                    message: format!("expected {} embeddings, got {}", batch.len(), vectors.len()),
                    attempts: 1,
                });
            }
            out.extend(vectors.into_iter().map(|v| EmbeddingVector::new(v, model.clone())));
        }
        let dim = out[0].dim();
        if dim == 0 || out.iter().any(|v| v.dim() != dim || !v.is_finite()) {
            return Err(GatewayError::ProviderError {
                message: "provider returned empty, ragged or non-finite embeddings".into(),
                attempts: 1,
            });
        }
        Ok(out)
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderFailure>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match call() {
                Ok(v) => return Ok(v),
                Err(ProviderFailure::Permanent(message)) => {
                    return Err(GatewayError::ProviderError {
                        message,
                        attempts: attempt,
                    })
                }
                Err(ProviderFailure::Transient(message)) => {
                    if attempt > self.config.max_retries {
                        return Err(GatewayError::ProviderError {
                            message,
                            attempts: attempt,
                        });
                    }
                    tracing::debug!(attempt, %message, "retrying provider request");
                    self.clock.sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn gateway(chat: MockChat, retries: u32, clock: ManualClock) -> Gateway {
        let cfg = ProviderConfig {
            max_retries: retries,
            ..ProviderConfig::default()
        };
        Gateway::new(cfg, Arc::new(chat), Arc::new(MockEmbedder::new(8)), Arc::new(clock)).unwrap()
    }

    fn req(user: &str) -> ChatRequest {
        ChatRequest {
            system_prompt: "sys".into(),
            user_prompt: user.into(),
            temperature: 0.0,
            max_output_tokens: 64,
            model_id: "m".into(),
        }
    }

    #[test]
    fn fixture_lookup_by_request_hash() {
        let r = req("hello");
        let chat = MockChat::new().with_fixture(&r, "fixture text");
        let gw = gateway(chat, 0, ManualClock::fixed());
        assert_eq!(gw.complete(&r).unwrap().text, "fixture text");
        let miss = gw.complete(&req("other")).unwrap_err();
        assert!(matches!(miss, GatewayError::ProviderError { attempts: 1, .. }));
    }

    #[test]
    fn transient_failures_are_retried_with_exponential_backoff() {
        let r = req("x");
        let chat = MockChat::new().with_fixture(&r, "ok");
        chat.fail_next(2);
        let clock = ManualClock::fixed();
        let gw = gateway(chat, 3, clock.clone());
        assert_eq!(gw.complete(&r).unwrap().text, "ok");
        assert_eq!(
            clock.sleeps(),
            vec![Duration::from_millis(500), Duration::from_millis(1000)]
        );
    }

    #[test]
    fn retries_exhausted_after_max_plus_one_attempts() {
        let r = req("x");
        let chat = MockChat::new().with_fixture(&r, "ok");
        chat.set_failing(true);
        let calls = chat.call_counter();
        let gw = gateway(chat, 2, ManualClock::fixed());
        let err = gw.complete(&r).unwrap_err();
        assert_eq!(
            err,
            GatewayError::ProviderError {
                message: "mock provider configured to fail".into(),
                attempts: 3
            }
        );
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 3);
    }

    #[test]
    fn invalid_requests_are_rejected_before_the_provider() {
        let gw = gateway(MockChat::new(), 0, ManualClock::fixed());
        assert!(matches!(gw.complete(&req("  ")), Err(GatewayError::InvalidRequest(_))));
        let mut hot = req("x");
        hot.temperature = 2.5;
        assert!(matches!(gw.complete(&hot), Err(GatewayError::InvalidRequest(_))));
        let cfg = ProviderConfig {
            max_retries: 11,
            ..ProviderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embed_batch_shapes_and_errors() {
        let gw = gateway(MockChat::new(), 0, ManualClock::fixed());
        let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let v = gw.embed_batch(&texts).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|e| e.dim() == 8));
        assert_eq!(
            gw.embed_batch(&["a".into(), "".into()]).unwrap_err(),
            GatewayError::EmptyText { index: 1 }
        );
        assert_eq!(gw.embed_batch(&[]).unwrap_err(), GatewayError::EmptyBatch);
        let twice = gw.embed_batch(&["same".into(), "same".into()]).unwrap();
        assert_eq!(twice[0], twice[1]);
    }

    #[test]
    fn embed_batch_splits_requests() {
        let embedder = Arc::new(MockEmbedder::new(4));
        let cfg = ProviderConfig {
            embed_batch_size: 2,
            ..ProviderConfig::default()
        };
        let gw = Gateway::new(
            cfg,
            Arc::new(MockChat::new()),
            embedder.clone(),
            Arc::new(ManualClock::fixed()),
        )
        .unwrap();
        let texts: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let all = gw.embed_batch(&texts).unwrap();
        assert_eq!(embedder.batch_sizes(), vec![2, 2, 1]);
        let single: Vec<_> = texts.iter().map(|t| gw.embed_batch(std::slice::from_ref(t)).unwrap().remove(0)).collect();
        assert_eq!(all, single);
    }

    #[test]
    fn limiter_caps_in_flight_requests() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatProvider for Slow {
            fn chat(&self, _: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse {
                    text: "ok".into(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                })
            }
        }
        let slow = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Arc::new(
            Gateway::new(
                ProviderConfig::default(),
                slow.clone(),
                Arc::new(MockEmbedder::new(4)),
                Arc::new(ManualClock::fixed()),
            )
            .unwrap(),
        );
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete(&req("x")).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= DEFAULT_MAX_IN_FLIGHT);
    }
}
