//! Chat-completions client with bounded concurrency and retries.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("connection error: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<LlmError> },
    #[error("skipped after an earlier failure (fail-fast)")]
    Aborted,
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Status { status, .. } => matches!(status, 408 | 425 | 429) || *status >= 500,
            LlmError::Connect(_) | LlmError::Timeout | LlmError::Transport(_) => true,
            _ => false,
        }
    }

    fn from_reqwest(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            LlmError::Timeout
        } else if e.is_connect() {
            LlmError::Connect(e.to_string())
        } else if e.is_decode() {
            LlmError::Decode(e.to_string())
        } else {
            LlmError::Transport(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub do_sample: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub num_beams: u32,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            do_sample: false,
            temperature: 0.0,
            top_p: 1.0,
            num_beams: 3,
            max_tokens: 2048,
        }
    }
}

impl DecodeParams {
    /// Sampling setup used to draw diverse intermediate translations.
    pub fn diverse() -> Self {
        DecodeParams {
            do_sample: true,
            temperature: 0.3,
            top_p: 0.7,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.num_beams == 0 {
            return Err("num_beams must be >= 1".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be >= 1".into());
        }
        Ok(())
    }

    /// Temperature and top_p as sent; greedy when sampling is off.
    fn wire_sampling(&self) -> (f64, f64) {
        if self.do_sample {
            (self.temperature, self.top_p)
        } else {
            (0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: String::new(),
            api_key: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        reqwest::Url::parse(&self.base_url).map_err(|e| format!("base_url {:?}: {e}", self.base_url))?;
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("timeout must be > 0, got {}", self.timeout_secs));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        Ok(())
    }

    pub(crate) fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Exponential backoff with multiplicative jitter, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
            cap: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.base.as_secs_f64() * self.factor.powi(retry as i32);
        let jittered = if self.jitter > 0.0 {
            nominal * (1.0 + rand::rng().random_range(-self.jitter..=self.jitter))
        } else {
            nominal
        };
        Duration::from_secs_f64(jittered.clamp(0.0, self.cap.as_secs_f64()))
    }
}

/// Shared HTTP plumbing: one semaphore bounds outstanding requests for an
/// endpoint, and transient failures are retried with backoff.
pub(crate) struct Transport {
    http: reqwest::Client,
    pub(crate) cfg: EndpointConfig,
    permits: Semaphore,
    backoff: Backoff,
    retries: AtomicU64,
    next_id: AtomicU64,
}

impl Transport {
    pub(crate) fn new(cfg: EndpointConfig, backoff: Backoff) -> Result<Self, LlmError> {
        cfg.validate().map_err(LlmError::Config)?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Transport {
            http,
            permits: Semaphore::new(cfg.max_in_flight),
            cfg,
            backoff,
            retries: AtomicU64::new(0),
            next_id: AtomicU64::new(1),
        })
    }

    pub(crate) fn retries(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }

    async fn send_once(&self, url: &str, body: &Value, request_id: &str) -> Result<Value, LlmError> {
        let mut req = self.http.post(url).json(body).header("x-request-id", request_id);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(LlmError::from_reqwest)?;
        let status = resp.status();
        let text = resp.text().await.map_err(LlmError::from_reqwest)?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body: excerpt(&text),
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Decode(format!("{e}: {}", excerpt(&text))))
    }

    /// POSTs `body` (rebuilt per attempt) while holding one in-flight permit.
    pub(crate) async fn post_json(&self, path: &str, mut body: impl FnMut() -> Value) -> Result<Value, LlmError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let url = self.cfg.endpoint(path);
        let request_id = format!("req-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut attempt: u32 = 0;
        loop {
            let payload = body();
            debug!(request_id, url, attempt, "sending request");
            match self.send_once(&url, &payload, &request_id).await {
                Ok(v) => {
                    debug!(request_id, "request succeeded");
                    return Ok(v);
                }
                Err(e) if e.retryable() && attempt < self.cfg.max_retries => {
                    let delay = self.backoff.delay(attempt);
                    warn!(request_id, error = %e, ?delay, "retrying");
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    attempt += 1;
                    tokio::time::sleep(delay).await;
                }
                Err(e) if attempt > 0 && e.retryable() => {
                    return Err(LlmError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn excerpt(s: &str) -> String {
    const MAX: usize = 300;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Client for one chat-completions endpoint. Cheap to clone; clones share the
/// in-flight bound.
#[derive(Clone)]
pub struct LlmClient {
    transport: Arc<Transport>,
    send_beams: Arc<AtomicBool>,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, LlmError> {
        Self::with_backoff(cfg, Backoff::default())
    }

    pub fn with_backoff(cfg: EndpointConfig, backoff: Backoff) -> Result<Self, LlmError> {
        Ok(LlmClient {
            transport: Arc::new(Transport::new(cfg, backoff)?),
            send_beams: Arc::new(AtomicBool::new(true)),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.transport.cfg
    }

    /// Retries performed so far across all calls on this client.
    pub fn retry_count(&self) -> u64 {
        self.transport.retries()
    }

    fn request_body(&self, prompt: &str, dp: &DecodeParams) -> Value {
        let (temperature, top_p) = dp.wire_sampling();
        let mut body = json!({
            "model": self.transport.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
            "max_tokens": dp.max_tokens,
        });
        if self.send_beams.load(Ordering::SeqCst) {
            body["num_beams"] = json!(dp.num_beams);
        }
        body
    }

    pub async fn complete(&self, prompt: &str, dp: &DecodeParams) -> Result<String, LlmError> {
        let result = self
            .transport
            .post_json("/v1/chat/completions", || self.request_body(prompt, dp))
            .await;
        let value = match result {
            // servers that reject unknown fields get one resend without the beam extension
            Err(LlmError::Status {
                status: 400 | 422,
                ref body,
            }) if body.contains("num_beams") && self.send_beams.swap(false, Ordering::SeqCst) => {
                warn!("endpoint rejected num_beams; falling back to greedy decoding");
                self.transport
                    .post_json("/v1/chat/completions", || self.request_body(prompt, dp))
                    .await?
            }
            other => other?,
        };
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Decode("missing choices[0].message.content".into()))
    }

    /// Runs all prompts, at most `max_in_flight` at a time. Results line up with
    /// `prompts` by index. With `fail_fast`, prompts not yet sent when the first
    /// failure lands are skipped with [`LlmError::Aborted`].
    pub async fn complete_batch(&self, prompts: &[String], dp: &DecodeParams, fail_fast: bool) -> BatchOutcome {
        let abort = AtomicBool::new(false);
        let abort = &abort;
        let futs = prompts.iter().map(|p| async move {
            if fail_fast && abort.load(Ordering::SeqCst) {
                return Err(LlmError::Aborted);
            }
            let r = self.complete(p, dp).await;
            if r.is_err() && fail_fast {
                abort.store(true, Ordering::SeqCst);
            }
            r
        });
        let results = futures::stream::iter(futs)
            .buffered(self.transport.cfg.max_in_flight)
            .collect()
            .await;
        BatchOutcome { results }
    }
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub results: Vec<Result<String, LlmError>>,
}

#[derive(Debug, Error)]
#[error("{} of {total} requests failed (indices {:?}); first: {}", failures.len(), failed_indices(failures), failures[0].1)]
pub struct BatchError {
    pub total: usize,
    pub failures: Vec<(usize, LlmError)>,
    /// Successful outputs, `None` at failed indices.
    pub partial: Vec<Option<String>>,
}

fn failed_indices(f: &[(usize, LlmError)]) -> Vec<usize> {
    f.iter().map(|(i, _)| *i).collect()
}

impl BatchError {
    pub fn failed_indices(&self) -> Vec<usize> {
        failed_indices(&self.failures)
    }
}

impl BatchOutcome {
    pub fn succeeded(&self) -> usize {
        self.results.iter().filter(|r| r.is_ok()).count()
    }

    pub fn into_result(self) -> Result<Vec<String>, BatchError> {
        let total = self.results.len();
        let mut partial = Vec::with_capacity(total);
        let mut failures = Vec::new();
        for (i, r) in self.results.into_iter().enumerate() {
            match r {
                Ok(s) => partial.push(Some(s)),
                Err(e) => {
                    partial.push(None);
                    failures.push((i, e));
                }
            }
        }
        if failures.is_empty() {
            Ok(partial.into_iter().map(Option::unwrap).collect())
        } else {
            Err(BatchError {
                total,
                failures,
                partial,
            })
        }
    }
}
