//! Chat-completion gateway: sampling configuration, content-addressed request
//! keys, an append-only response cache, retries with backoff, bounded
//! concurrency, and interchangeable live/mock backends.

mod cache;
mod http;
mod mock;
mod plan;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptkit::ChatMessage;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{messages_digest, MockBackend, MockFixture};
pub use plan::{plan_requests, ExemplarSource, IclLabels, PlannedRequest, RoleAxis, RunMatrix, Toggle};

pub const MAX_TOKENS: u32 = 256;
pub const TOP_P: f64 = 1.0;
pub const FREQUENCY_PENALTY: f64 = 0.0;
pub const PRESENCE_PENALTY: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GateError {
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("credential rejected or missing: {0}")]
    Credential(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("cache miss in cache-only mode for request {0}")]
    CacheMiss(String),
    #[error("no mock fixture scripted for request {0}")]
    MockMiss(String),
    #[error("cache I/O: {0}")]
    Io(String),
}

impl GateError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GateError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub model_name: String,
    pub temperature: f64,
    pub n: u32,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl SamplingConfig {
    pub fn new(model_name: impl Into<String>, temperature: f64, n: u32) -> Result<Self, GateError> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(GateError::Config(format!("temperature {temperature} outside [0, 1]")));
        }
        if n == 0 {
            return Err(GateError::Config("n must be at least 1".into()));
        }
        if temperature == 0.0 && n > 1 {
            return Err(GateError::Config(format!("temperature 0 requires n = 1, got {n}")));
        }
        Ok(SamplingConfig {
            model_name: model_name.into(),
            temperature,
            n,
            max_tokens: MAX_TOKENS,
            top_p: TOP_P,
            frequency_penalty: FREQUENCY_PENALTY,
            presence_penalty: PRESENCE_PENALTY,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub config: SamplingConfig,
    pub messages: Vec<ChatMessage>,
    pub request_key: String,
}

/// Canonical hashed form; field order is fixed by declaration.
#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    n: u32,
    max_tokens: u32,
    top_p: f64,
    frequency_penalty: f64,
    presence_penalty: f64,
}

impl CompletionRequest {
    pub fn new(config: SamplingConfig, messages: Vec<ChatMessage>) -> Self {
        let material = KeyMaterial {
            model: &config.model_name,
            messages: &messages,
            temperature: config.temperature,
            n: config.n,
            max_tokens: config.max_tokens,
            top_p: config.top_p,
            frequency_penalty: config.frequency_penalty,
            presence_penalty: config.presence_penalty,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        let request_key = hex::encode(Sha256::digest(&bytes));
        CompletionRequest {
            config,
            messages,
            request_key,
        }
    }

    /// Wire body for an OpenAI-compatible chat-completions endpoint.
    pub fn wire_body(&self, n: u32) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model_name,
            "messages": self.messages,
            "temperature": self.config.temperature,
            "n": n,
            "max_tokens": self.config.max_tokens,
            "top_p": self.config.top_p,
            "frequency_penalty": self.config.frequency_penalty,
            "presence_penalty": self.config.presence_penalty,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Live,
    Cache,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionBatch {
    pub request_key: String,
    pub samples: Vec<String>,
    pub provenance: Provenance,
    pub created_at_ms: u64,
    pub returned_at_ms: u64,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Something that can turn a request into exactly `n` raw completions.
pub trait ChatBackend: Send + Sync {
    /// `Live` or `Mock`.
    fn provenance(&self) -> Provenance;
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, GateError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Fractional jitter applied symmetrically to every delay.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * 2f64.powi(retry as i32);
        let factor = if self.jitter > 0.0 {
            1.0 + rand::thread_rng().gen_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(base * factor)
    }
}

#[derive(Debug, Default)]
struct Counters {
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    retries: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    /// Requests answered by the live or mock backend.
    pub backend_calls: usize,
    pub cache_hits: usize,
    pub retries: usize,
}

/// Counting semaphore capping simultaneous backend calls.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    backend: Option<Box<dyn ChatBackend>>,
    cache: ResponseCache,
    retry: RetryPolicy,
    max_in_flight: usize,
    slots: Slots,
    counters: Counters,
}

impl Gateway {
    /// `backend = None` is cache-only mode.
    pub fn new(backend: Option<Box<dyn ChatBackend>>, cache: ResponseCache) -> Self {
        Gateway::with_limits(backend, cache, RetryPolicy::default(), 8)
    }

    pub fn with_limits(
        backend: Option<Box<dyn ChatBackend>>,
        cache: ResponseCache,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Gateway {
            backend,
            cache,
            retry,
            max_in_flight,
            slots: Slots::new(max_in_flight),
            counters: Counters::default(),
        }
    }

    pub fn stats(&self) -> GateStats {
        GateStats {
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            retries: self.counters.retries.load(Ordering::SeqCst),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionBatch, GateError> {
        if let Some(entry) = self.cache.get(&request.request_key) {
            if entry.samples.len() == request.config.n as usize {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(CompletionBatch {
                    request_key: entry.request_key,
                    samples: entry.samples,
                    provenance: Provenance::Cache,
                    created_at_ms: entry.created_at_ms,
                    returned_at_ms: now_ms(),
                });
            }
            log::warn!(
                "cached batch {} has {} samples, expected {}; ignoring",
                request.request_key,
                entry.samples.len(),
                request.config.n
            );
        }
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| GateError::CacheMiss(request.request_key.clone()))?;
        let samples = self.call_with_retry(backend.as_ref(), request)?;
        if samples.len() != request.config.n as usize {
            return Err(GateError::Protocol(format!(
                "backend returned {} samples for n = {}",
                samples.len(),
                request.config.n
            )));
        }
        let created_at_ms = now_ms();
        self.cache.put(CacheEntry {
            request_key: request.request_key.clone(),
            model: request.config.model_name.clone(),
            samples: samples.clone(),
            provenance: backend.provenance(),
            created_at_ms,
        })?;
        Ok(CompletionBatch {
            request_key: request.request_key.clone(),
            samples,
            provenance: backend.provenance(),
            created_at_ms,
            returned_at_ms: now_ms(),
        })
    }

    fn call_with_retry(
        &self,
        backend: &dyn ChatBackend,
        request: &CompletionRequest,
    ) -> Result<Vec<String>, GateError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _slot = self.slots.acquire();
                backend.complete(request)
            };
            match result {
                Ok(samples) => {
                    self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
                    return Ok(samples);
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    self.counters.retries.fetch_add(1, Ordering::SeqCst);
                    let delay = self.retry.delay(attempt - 1);
                    log::warn!("request {} failed ({e}); retrying in {delay:?}", request.request_key);
                    std::thread::sleep(delay);
                }
                Err(GateError::Transient(message)) => {
                    return Err(GateError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Completes every request with at most `max_in_flight` backend calls at
    /// once. Results come back in request order.
    pub fn complete_all(&self, requests: &[CompletionRequest]) -> Vec<Result<CompletionBatch, GateError>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new()
                .num_threads(self.max_in_flight)
                .build()
            {
                Ok(pool) => {
                    return pool.install(|| requests.par_iter().map(|r| self.complete(r)).collect())
                }
                Err(e) => log::warn!("falling back to sequential requests: {e}"),
            }
        }
        requests.iter().map(|r| self.complete(r)).collect()
    }
}
