use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use url::Url;

use super::{parse_atom, query_for, IngestError, PaperRecord, SearchSpec};
use crate::clock::{Clock, SystemClock};

pub const ARXIV_QUERY_URL: &str = "http://export.arxiv.org/api/query";
pub const MIN_REQUEST_GAP: Duration = Duration::from_secs(3);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &Url) -> Result<TransportResponse, IngestError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, IngestError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("litscope/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| IngestError::HttpError(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &Url) -> Result<TransportResponse, IngestError> {
        let resp = self
            .client
            .get(url.clone())
            .send()
            .map_err(|e| IngestError::HttpError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(|e| IngestError::HttpError(e.to_string()))?.to_vec();
        Ok(TransportResponse { status, body })
    }
}

type Handler = Box<dyn Fn(&Url) -> TransportResponse + Send + Sync>;

/// Serves canned responses. Routes match on the decoded `search_query`
/// parameter; anything unmatched goes to the fallback handler (404 if none).
#[derive(Default)]
pub struct FixtureTransport {
    by_query: HashMap<String, TransportResponse>,
    fallback: Option<Handler>,
    requests: Mutex<Vec<Url>>,
}

impl FixtureTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_query(mut self, search_query: &str, status: u16, body: impl Into<Vec<u8>>) -> Self {
        self.by_query.insert(
            search_query.to_owned(),
            TransportResponse {
                status,
                body: body.into(),
            },
        );
        self
    }

    pub fn always(status: u16, body: impl Into<Vec<u8>>) -> Self {
        let resp = TransportResponse {
            status,
            body: body.into(),
        };
        Self::new().with_fallback(move |_| resp.clone())
    }

    pub fn with_fallback(mut self, f: impl Fn(&Url) -> TransportResponse + Send + Sync + 'static) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    pub fn requests(&self) -> Vec<Url> {
        self.requests.lock().clone()
    }
}

pub(crate) fn search_query_of(url: &Url) -> Option<String> {
    url.query_pairs()
        .find(|(k, _)| k == "search_query")
        .map(|(_, v)| v.into_owned())
}

impl Transport for FixtureTransport {
    fn get(&self, url: &Url) -> Result<TransportResponse, IngestError> {
        self.requests.lock().push(url.clone());
        let routed = search_query_of(url).and_then(|q| self.by_query.get(&q).cloned());
        Ok(routed
            .or_else(|| self.fallback.as_ref().map(|f| f(url)))
            .unwrap_or(TransportResponse {
                status: 404,
                body: b"no fixture".to_vec(),
            }))
    }
}

#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Enforces a minimum gap between consecutive requests. Callers queue on an
/// internal lock, so grants are strictly ordered.
pub struct RateLimiter {
    clock: Arc<dyn Clock>,
    min_gap: Duration,
    last: Mutex<Option<DateTime<Utc>>>,
    grants: Mutex<Vec<DateTime<Utc>>>,
}

const SLEEP_SLICE: Duration = Duration::from_millis(100);

impl RateLimiter {
    pub fn new(clock: Arc<dyn Clock>, min_gap: Duration) -> Self {
        Self {
            clock,
            min_gap,
            last: Mutex::new(None),
            grants: Mutex::new(Vec::new()),
        }
    }

    pub fn acquire(&self, cancel: Option<&CancelToken>) -> Result<(), IngestError> {
        let mut last = self.last.lock();
        if let Some(prev) = *last {
            let ready_at = prev + chrono::Duration::from_std(self.min_gap).unwrap();
            loop {
                if cancel.is_some_and(CancelToken::is_cancelled) {
                    return Err(IngestError::RateLimited);
                }
                let now = self.clock.now();
                if now >= ready_at {
                    break;
                }
                let remaining = (ready_at - now).to_std().unwrap_or_default();
                self.clock.sleep(remaining.min(SLEEP_SLICE));
            }
        }
        let now = self.clock.now();
        *last = Some(now);
        self.grants.lock().push(now);
        Ok(())
    }

    /// Times at which requests were let through.
    pub fn grants(&self) -> Vec<DateTime<Utc>> {
        self.grants.lock().clone()
    }
}

pub struct ArxivClient {
    transport: Arc<dyn Transport>,
    limiter: RateLimiter,
    base_url: Url,
}

impl ArxivClient {
    pub fn new(transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        Self::with_min_gap(transport, clock, MIN_REQUEST_GAP)
    }

    /// A client with a custom request gap, for transports that never reach
    /// the real endpoint.
    pub fn with_min_gap(transport: Arc<dyn Transport>, clock: Arc<dyn Clock>, gap: Duration) -> Self {
        Self {
            transport,
            limiter: RateLimiter::new(clock, gap),
            base_url: Url::parse(ARXIV_QUERY_URL).unwrap(),
        }
    }

    pub fn http() -> Result<Self, IngestError> {
        Ok(Self::new(
            Arc::new(HttpTransport::new(Duration::from_secs(60))?),
            Arc::new(SystemClock),
        ))
    }

    pub fn limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    pub fn request_url(&self, spec: &SearchSpec) -> Url {
        let mut url = self.base_url.clone();
        url.query_pairs_mut()
            .append_pair("search_query", &query_for(spec.keywords()))
            .append_pair("start", &spec.start().to_string())
            .append_pair("max_results", &spec.max_results().to_string())
            .append_pair("sortBy", spec.sort().as_param());
        url
    }

    pub fn fetch(&self, spec: &SearchSpec) -> Result<Vec<PaperRecord>, IngestError> {
        self.fetch_cancellable(spec, None)
    }

    pub fn fetch_cancellable(
        &self,
        spec: &SearchSpec,
        cancel: Option<&CancelToken>,
    ) -> Result<Vec<PaperRecord>, IngestError> {
        let url = self.request_url(spec);
        self.limiter.acquire(cancel)?;
        let resp = self.transport.get(&url)?;
        if !(200..300).contains(&resp.status) {
            return Err(IngestError::HttpError(format!("HTTP {} from {url}", resp.status)));
        }
        let mut records = parse_atom(&resp.body)?;
        records.truncate(spec.max_results() as usize);
        Ok(records)
    }
}
