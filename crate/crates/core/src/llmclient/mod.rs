//! Completion-style LLM client.
//!
//! The primary contract is raw text completion: a request carries either a
//! fresh prompt or a verbatim partial transcript to be continued, which the
//! test-time scaling loop needs to resume a spliced reasoning trace.
//! Transport is pluggable through [`CompletionBackend`].

#[cfg(feature = "native")]
mod http;
pub mod mock;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::Semaphore;

#[cfg(feature = "native")]
pub use http::{HttpBackend, HttpConfig, WireFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    Fresh,
    /// `prompt` is a partial transcript; the endpoint continues it as-is.
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
    pub mode: GenMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenRequest {
    pub fn fresh(prompt: impl Into<String>, max_tokens: u32, temperature: f64) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            temperature,
            stop: Vec::new(),
            mode: GenMode::Fresh,
            seed: None,
        }
    }

    pub fn continuation(transcript: impl Into<String>, max_tokens: u32, temperature: f64) -> Self {
        Self {
            mode: GenMode::Continuation,
            ..Self::fresh(transcript, max_tokens, temperature)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub generated_tokens: u32,
}

/// Failure classes reported by a transport.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, 429, 5xx, connection resets.
    #[error("transient: {0}")]
    Transient(String),
    /// The request itself was refused (4xx); never retried.
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError>;

    fn model_id(&self) -> String {
        "unknown".to_string()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    EndpointUnreachable { attempts: u32, last: String },
    #[error("run token budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, given `n` failed attempts (n >= 1).
    pub fn delay_after(&self, failures: u32) -> Duration {
        let factor = 1u32.checked_shl(failures.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Cumulative generated-token guard for a run. Tokens are reserved before a
/// request (clamping its `max_tokens` to what is left) and the unused part
/// is released afterwards, so concurrent requests cannot overshoot.
#[derive(Debug)]
pub struct TokenBudget {
    limit: Option<u64>,
    used: AtomicU64,
}

impl TokenBudget {
    pub fn new(limit: Option<u64>) -> Self {
        Self {
            limit,
            used: AtomicU64::new(0),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    fn reserve(&self, want: u32) -> Result<u32, LlmError> {
        let Some(limit) = self.limit else {
            self.used.fetch_add(u64::from(want), Ordering::SeqCst);
            return Ok(want);
        };
        let mut cur = self.used.load(Ordering::SeqCst);
        loop {
            let remaining = limit.saturating_sub(cur);
            if remaining == 0 {
                return Err(LlmError::BudgetExceeded { limit });
            }
            let grant = u64::from(want).min(remaining);
            match self
                .used
                .compare_exchange(cur, cur + grant, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(grant as u32),
                Err(actual) => cur = actual,
            }
        }
    }

    fn settle(&self, reserved: u32, actual: u32) {
        if actual < reserved {
            self.used.fetch_sub(u64::from(reserved - actual), Ordering::SeqCst);
        } else if actual > reserved {
            // Endpoint overran its limit; account for what it really produced.
            self.used.fetch_add(u64::from(actual - reserved), Ordering::SeqCst);
        }
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    seq: u64,
    request: &'a GenRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a GenResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    attempts: u32,
}

/// Shareable client: retries, run budget, in-flight cap and an
/// append-only transcript log.
pub struct LlmClient {
    backend: Box<dyn CompletionBackend>,
    retry: RetryPolicy,
    budget: TokenBudget,
    in_flight: Semaphore,
    log: Option<Mutex<File>>,
    seq: AtomicU64,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: impl CompletionBackend + 'static) -> Self {
        Self::from_boxed(Box::new(backend))
    }

    pub fn from_boxed(backend: Box<dyn CompletionBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            budget: TokenBudget::new(None),
            in_flight: Semaphore::new(8),
            log: None,
            seq: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_budget(mut self, limit: Option<u64>) -> Self {
        self.budget = TokenBudget::new(limit);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    /// Append every request/response pair to `path` as JSON lines.
    pub fn with_transcript_log(mut self, path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn budget(&self) -> &TokenBudget {
        &self.budget
    }

    pub fn model_id(&self) -> String {
        self.backend.model_id()
    }

    /// Number of `generate` calls made (successful or not).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if req.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if req.temperature.is_nan() || req.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        let granted = self.budget.reserve(req.max_tokens)?;
        let mut effective = req.clone();
        effective.max_tokens = granted;

        let _permit = self.in_flight.acquire();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.backend.complete(&effective) {
                Ok(resp) => break Ok(resp),
                Err(BackendError::Transient(msg)) => {
                    if attempts >= self.retry.max_attempts {
                        break Err(LlmError::EndpointUnreachable { attempts, last: msg });
                    }
                    std::thread::sleep(self.retry.delay_after(attempts));
                }
                Err(BackendError::Rejected(msg)) => break Err(LlmError::Rejected(msg)),
                Err(BackendError::Malformed(msg)) => break Err(LlmError::MalformedResponse(msg)),
            }
        };

        match &result {
            Ok(resp) => self.budget.settle(granted, resp.generated_tokens),
            Err(_) => self.budget.settle(granted, 0),
        }
        self.write_log(&effective, &result, attempts);
        result
    }

    fn write_log(&self, req: &GenRequest, result: &Result<GenResponse, LlmError>, attempts: u32) {
        let Some(log) = &self.log else { return };
        let line = LogLine {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            request: req,
            response: result.as_ref().ok(),
            error: result.as_ref().err().map(ToString::to_string),
            attempts,
        };
        let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
        if let Ok(mut bytes) = serde_json::to_vec(&line) {
            bytes.push(b'\n');
            if let Err(e) = f.write_all(&bytes) {
                tracing::warn!("transcript log write failed: {e}");
            }
        }
    }
}
