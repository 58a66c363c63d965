//! Completion backends and the gateway that calls them.
//!
//! A [`CompletionBackend`] turns a chat context into text plus token usage.
//! The [`Gateway`] wraps one backend with transient-error retries
//! (exponential backoff) and a cap on concurrent in-flight calls. Two
//! backends ship here: a deterministic scripted mock for tests and offline
//! runs, and an HTTP client for OpenAI-compatible chat-completion endpoints.
//! Calls within one episode are issued strictly sequentially by the rollout
//! loop; the in-flight cap only matters across parallel episodes.

use crate::prompt::Context;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

// ---------------------------------------------------------------------------
// Requests, results, errors
// ---------------------------------------------------------------------------

/// One completion call. `temperature` must be non-negative; the first
/// message of `context` carries the task instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub context: Context,
    pub temperature: f64,
    pub max_output_tokens: u64,
    /// Propagated to backends that accept a sampling seed; the mock backend
    /// uses it to pick a deterministic starting point in its script.
    pub seed_hint: Option<i64>,
}

/// What a completion call produced, with token accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub backend_id: String,
    /// True when token counts came from the fallback word-count estimator
    /// rather than the backend's own usage report.
    pub estimated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatewayError {
    /// Network or protocol failure. Only retryable transports are retried.
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    /// Credential rejected; never retried.
    #[error("authentication failed: {0}")]
    Auth(String),
    /// The context exceeds the backend's window; never retried.
    #[error("context of {tokens} tokens exceeds the backend context window{}", window.map(|w| format!(" of {w}")).unwrap_or_default())]
    ContextTooLong { tokens: u64, window: Option<u64> },
}

impl GatewayError {
    pub fn transport(message: impl Into<String>) -> Self {
        GatewayError::Transport { message: message.into(), retryable: true }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { retryable: true, .. })
    }
}

/// Fallback tokenizer: 1.3 tokens per whitespace-separated word, rounded up.
/// Uses integer arithmetic (`(13n + 9) / 10`) so counts never drift from
/// floating-point rounding.
pub fn count_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (13 * words + 9) / 10
}

// ---------------------------------------------------------------------------
// Backend trait
// ---------------------------------------------------------------------------

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
    /// Stable identifier recorded in every result, e.g. a model name.
    fn id(&self) -> &str;
}

// ---------------------------------------------------------------------------
// Gateway: retries + concurrency cap
// ---------------------------------------------------------------------------

/// Backoff schedule for retryable transport errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 200, multiplier: 2.0, max_delay_ms: 5000 }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt as i32);
        let ms = (self.base_delay_ms as f64 * factor).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

/// Counting semaphore over `Mutex` + `Condvar`; permits release on drop.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut count = self.permits.lock().unwrap();
        while *count == 0 {
            count = self.available.wait(count).unwrap();
        }
        *count -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}

/// A backend plus operational policy: at most `max_in_flight` concurrent
/// calls, and exponential-backoff retries on retryable transport errors.
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    retry: RetryPolicy,
    semaphore: Semaphore,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        assert!(max_in_flight >= 1, "at least one call must be allowed in flight");
        Gateway { backend, retry, semaphore: Semaphore::new(max_in_flight) }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Performs one completion, holding an in-flight permit for the whole
    /// call including retries.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        debug_assert!(request.temperature >= 0.0, "temperature must be non-negative");
        let _permit = self.semaphore.acquire();
        let mut attempt = 0;
        loop {
            match self.backend.complete(request) {
                Ok(result) => return Ok(result),
                Err(err) if err.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let delay = self.retry.delay_for(attempt);
                    log::warn!(
                        "retryable transport error (attempt {}/{}), backing off {:?}: {err}",
                        attempt + 1,
                        self.retry.max_attempts,
                        delay
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Deterministic scripted backend. Replies come from `script` in order,
/// starting at an offset derived from the request's `seed_hint`; with
/// `cycle`, the script repeats forever, otherwise exhaustion is a
/// non-retryable transport error. An optional context window makes
/// over-long inputs fail exactly like a real backend would.
pub struct MockBackend {
    script: Vec<String>,
    cursor: AtomicUsize,
    cycle: bool,
    context_window: Option<u64>,
    fail_first: AtomicUsize,
    id: String,
}

impl MockBackend {
    pub fn new(script: Vec<String>) -> Self {
        MockBackend {
            script,
            cursor: AtomicUsize::new(0),
            cycle: false,
            context_window: None,
            fail_first: AtomicUsize::new(0),
            id: "mock".to_string(),
        }
    }

    /// Repeat the script indefinitely instead of erroring on exhaustion.
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    /// Reject contexts longer than `window` tokens with `ContextTooLong`.
    pub fn with_context_window(mut self, window: u64) -> Self {
        self.context_window = Some(window);
        self
    }

    /// Fail the first `n` calls with a retryable transport error.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        loop {
            let remaining = self.fail_first.load(Ordering::SeqCst);
            if remaining == 0 {
                break;
            }
            if self
                .fail_first
                .compare_exchange(remaining, remaining - 1, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                return Err(GatewayError::transport("scripted transient failure"));
            }
        }
        let input_text = request.context.full_text();
        let input_tokens = count_tokens(&input_text);
        if let Some(window) = self.context_window {
            if input_tokens > window {
                return Err(GatewayError::ContextTooLong {
                    tokens: input_tokens,
                    window: Some(window),
                });
            }
        }
        if self.script.is_empty() {
            return Err(GatewayError::Transport {
                message: "mock script is empty".to_string(),
                retryable: false,
            });
        }
        let offset = request
            .seed_hint
            .map(|s| s.rem_euclid(self.script.len() as i64) as usize)
            .unwrap_or(0);
        let step = self.cursor.fetch_add(1, Ordering::SeqCst);
        let index = if self.cycle {
            (offset + step) % self.script.len()
        } else {
            let index = offset + step;
            if index >= self.script.len() {
                return Err(GatewayError::Transport {
                    message: format!(
                        "mock script exhausted after {} replies",
                        self.script.len()
                    ),
                    retryable: false,
                });
            }
            index
        };
        let text = self.script[index].clone();
        let output_tokens = count_tokens(&text);
        Ok(CompletionResult {
            text,
            input_tokens,
            output_tokens,
            latency_ms: 0,
            backend_id: self.id.clone(),
            estimated: true,
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

/// Chat-completions client: posts `model`, `messages`, `temperature`, and a
/// max-token limit; reads `choices[0].message.content` and `usage`. When the
/// response omits usage numbers, the fallback tokenizer fills them in and
/// the result is flagged `estimated`.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `api_key_env` names an environment variable holding the bearer token;
    /// the variable may be absent for unauthenticated local endpoints.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: &str) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(api_key_env).ok(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client construction cannot fail with these options"),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let body = WireRequest {
            model: &self.model,
            messages: request
                .context
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role.as_str(), content: &m.content })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            seed: request.seed_hint,
        };
        let started = Instant::now();
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http
            .send()
            .map_err(|e| GatewayError::transport(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::transport(format!("reading response body failed: {e}")))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Auth(format!("backend returned {status}")));
        }
        if !status.is_success() {
            let lowered = text.to_lowercase();
            if status.as_u16() == 400
                && (lowered.contains("context_length") || lowered.contains("context length")
                    || lowered.contains("maximum context") || lowered.contains("too long"))
            {
                return Err(GatewayError::ContextTooLong {
                    tokens: count_tokens(&request.context.full_text()),
                    window: None,
                });
            }
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(GatewayError::Transport {
                message: format!("backend returned {status}: {}", truncate(&text, 200)),
                retryable,
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::transport(format!("malformed response JSON: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::transport("response contained no choices"))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let (input_tokens, output_tokens, estimated) = match parsed.usage {
            Some(WireUsage { prompt_tokens: Some(i), completion_tokens: Some(o) }) => (i, o, false),
            _ => (
                count_tokens(&request.context.full_text()),
                count_tokens(&content),
                true,
            ),
        };
        Ok(CompletionResult {
            text: content,
            input_tokens,
            output_tokens,
            latency_ms,
            backend_id: self.model.clone(),
            estimated,
        })
    }

    fn id(&self) -> &str {
        &self.model
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
