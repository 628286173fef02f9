//! OpenAI-compatible chat-completion client with a content-addressed disk
//! cache, bounded retries and strict payload validation.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ABSA_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server error {status} after {attempts} attempt(s): {body}")]
    Server { status: u16, attempts: u32, body: String },
    #[error("authorization rejected ({status}): {body}")]
    Unauthorized { status: u16, body: String },
    #[error("request rejected ({status}): {body}")]
    Client { status: u16, body: String },
    #[error("malformed completion response: {message}")]
    MalformedResponse { message: String, body: String },
    #[error("payload violates extraction schema: {reason}; payload: {payload:?}")]
    Schema { reason: String, payload: String },
    #[error("cache error at {path}: {source}")]
    Cache { path: PathBuf, source: io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message { role: "system".into(), content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmRequest {
    pub endpoint: String,
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
    /// HTTP attempts spent on this call; 0 for cache hits.
    pub attempts: u32,
}

/// The parts of a request that determine its answer. The endpoint is not
/// among them, so recorded caches replay against any server address.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<Message>,
}

impl From<&LlmRequest> for RequestSummary {
    fn from(r: &LlmRequest) -> Self {
        RequestSummary {
            model: r.model.clone(),
            temperature: r.temperature,
            max_tokens: r.max_tokens,
            messages: r.messages.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: RequestSummary,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// SHA-256 over the canonical JSON encoding of [`RequestSummary`].
pub fn cache_key(r: &LlmRequest) -> String {
    let canonical = serde_json::to_vec(&RequestSummary::from(r)).expect("summary serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, base_delay: Duration::from_millis(500), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Sleep before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

/// Anything that can answer a chat request. Extraction code depends on this
/// rather than on [`LlmClient`] so tests can script replies.
pub trait ChatClient: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Slot<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Slot<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Slot(self)
    }
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LlmClient {
    agent: ureq::Agent,
    cache_dir: Option<PathBuf>,
    retry: RetryPolicy,
    api_key: Option<String>,
    in_flight: InFlight,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    network_calls: AtomicU64,
}

enum Attempt {
    Done(LlmResponse),
    Retry(LlmError),
    Fail(LlmError),
}

impl LlmClient {
    /// Client with the bearer token taken from [`API_KEY_ENV`].
    pub fn new(cache_dir: Option<PathBuf>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        LlmClient {
            agent,
            cache_dir,
            retry,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            in_flight: InFlight { used: Mutex::new(0), freed: Condvar::new(), limit: max_in_flight.max(1) },
            key_locks: Mutex::new(HashMap::new()),
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks.lock().unwrap().entry(key.to_string()).or_default().clone()
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn send_once(&self, req: &LlmRequest, attempt: u32) -> Attempt {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let body = serde_json::json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut call = self.agent.post(req.url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match call.send(body.to_string()) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts: attempt, message: e.to_string() }),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(LlmError::Transport { attempts: attempt, message: e.to_string() }),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok((content, prompt_tokens, completion_tokens)) => Attempt::Done(LlmResponse {
                    text: content,
                    prompt_tokens,
                    completion_tokens,
                    cached: false,
                    attempts: attempt,
                }),
                Err(message) => Attempt::Fail(LlmError::MalformedResponse { message, body: text }),
            },
            401 | 403 => Attempt::Fail(LlmError::Unauthorized { status, body: text }),
            400..=499 => Attempt::Fail(LlmError::Client { status, body: text }),
            _ => Attempt::Retry(LlmError::Server { status, attempts: attempt, body: text }),
        }
    }

    fn send_with_retries(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let _slot = self.in_flight.acquire();
        let mut attempt = 1;
        loop {
            match self.send_once(req, attempt) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.retry.max_attempts => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {attempt} failed: {e}; retrying");
                    thread::sleep(self.retry.delay_after(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

impl ChatClient for LlmClient {
    /// Cache hit: answered from disk with `cached = true` and no network.
    /// Miss: POST with retries on transport errors and 5xx (never 4xx); the
    /// answer is persisted before it is returned.
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        let key = cache_key(req);
        let lock = self.key_lock(&key);
        let _guard = lock.lock().unwrap();
        let path = self.cache_path(&key);
        if let Some(path) = &path {
            if let Some(entry) = read_cache(path, &key)? {
                return Ok(LlmResponse {
                    text: entry.response,
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                    cached: true,
                    attempts: 0,
                });
            }
        }
        let resp = self.send_with_retries(req)?;
        if let Some(path) = &path {
            let entry = CacheEntry {
                key,
                request: req.into(),
                response: resp.text.clone(),
                prompt_tokens: resp.prompt_tokens,
                completion_tokens: resp.completion_tokens,
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            };
            write_cache(path, &entry)?;
        }
        Ok(resp)
    }
}

fn cache_err(path: &Path, source: io::Error) -> LlmError {
    LlmError::Cache { path: path.to_path_buf(), source }
}

fn read_cache(path: &Path, key: &str) -> Result<Option<CacheEntry>, LlmError> {
    let raw = match fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(cache_err(path, e)),
    };
    let entry: CacheEntry =
        serde_json::from_str(&raw).map_err(|e| cache_err(path, io::Error::new(io::ErrorKind::InvalidData, e)))?;
    if entry.key != key {
        return Err(cache_err(path, io::Error::new(io::ErrorKind::InvalidData, "key mismatch")));
    }
    Ok(Some(entry))
}

fn write_cache(path: &Path, entry: &CacheEntry) -> Result<(), LlmError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut body = serde_json::to_string_pretty(entry).expect("cache entry serializes");
    body.push('\n');
    fs::write(&tmp, body).map_err(|e| cache_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| cache_err(path, e))
}

fn parse_completion(body: &str) -> Result<(String, u64, u64), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("not JSON: {e}"))?;
    let content =
        v.pointer("/choices/0/message/content").and_then(Value::as_str).ok_or("missing choices[0].message.content")?;
    let usage = |name: &str| v.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((content.to_string(), usage("prompt_tokens"), usage("completion_tokens")))
}

/// One `{term, category, polarity}` object from the model's answer, with
/// values not yet validated against the domain types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub term: String,
    pub category: String,
    pub polarity: String,
}

/// Accepts exactly one JSON array of objects whose keys are exactly `term`,
/// `category` and `polarity`, all strings. Surrounding whitespace is the
/// only tolerated extra.
pub fn parse_extraction_payload(text: &str) -> Result<Vec<RawRecord>, LlmError> {
    let schema = |reason: String| LlmError::Schema { reason, payload: text.to_string() };
    let value: Value =
        serde_json::from_str(text.trim()).map_err(|e| schema(format!("not a single JSON value: {e}")))?;
    let items = value.as_array().ok_or_else(|| schema("top level is not an array".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let obj = item.as_object().ok_or_else(|| schema(format!("element {i} is not an object")))?;
            if obj.len() != 3 {
                return Err(schema(format!("element {i} must have exactly term, category, polarity")));
            }
            let field = |name: &str| {
                obj.get(name)
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| schema(format!("element {i}: `{name}` missing or not a string")))
            };
            Ok(RawRecord { term: field("term")?, category: field("category")?, polarity: field("polarity")? })
        })
        .collect()
}
