//! HTTP clients for chat-completion and embedding services.
//!
//! Chat requests are `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role", "content"}], "temperature"}`; the reply is
//! the first choice's message content. Embedding requests are
//! `POST {base_url}/embeddings` with `{"model", "input": [..]}`; vectors come
//! from `data[i].embedding` in input order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{
    BackendRequest, BackendStats, CacheEntry, Embedder, Generator, RankRequest, Ranker,
    RequestKind, ResponseCache,
};
use crate::error::{Error, Result};
use crate::prompting::AssembledInput;
use crate::retrieval::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 20_000,
        }
    }
}

impl RetryPolicy {
    /// Sleep before retry number `retry` (1-based): base * 2^(retry-1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64
            .checked_shl(retry.saturating_sub(1))
            .unwrap_or(u64::MAX);
        Duration::from_millis(
            self.base_delay_ms
                .saturating_mul(factor)
                .min(self.max_delay_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimit {
    /// 0 means unbounded.
    pub max_in_flight: usize,
    pub min_interval_ms: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        RateLimit {
            max_in_flight: 4,
            min_interval_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSpec {
    /// Backend name; selects `TAGREC_<NAME>_API_KEY` and `TAGREC_<NAME>_BASE_URL`.
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub system_prompt: Option<String>,
    pub retry: RetryPolicy,
    pub rate_limit: RateLimit,
    pub timeout_secs: u64,
}

impl Default for RemoteSpec {
    fn default() -> Self {
        RemoteSpec {
            name: "openai".into(),
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-3.5-turbo-1106".into(),
            temperature: 0.0,
            max_tokens: None,
            system_prompt: None,
            retry: RetryPolicy::default(),
            rate_limit: RateLimit::default(),
            timeout_secs: 120,
        }
    }
}

impl RemoteSpec {
    fn env_prefix(&self) -> String {
        let name: String = self
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("TAGREC_{name}")
    }

    pub fn api_key_var(&self) -> String {
        format!("{}_API_KEY", self.env_prefix())
    }

    pub fn base_url_var(&self) -> String {
        format!("{}_BASE_URL", self.env_prefix())
    }

    fn resolved_base_url(&self) -> String {
        std::env::var(self.base_url_var())
            .ok()
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| self.base_url.clone())
            .trim_end_matches('/')
            .to_string()
    }
}

struct LimiterState {
    in_flight: usize,
    next_start: Option<Instant>,
}

struct RateLimiter {
    limit: RateLimit,
    state: Mutex<LimiterState>,
    released: Condvar,
}

struct Permit<'a>(&'a RateLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.0.state.lock().unwrap_or_else(|p| p.into_inner());
        state.in_flight -= 1;
        self.0.released.notify_one();
    }
}

impl RateLimiter {
    fn new(limit: RateLimit) -> Self {
        RateLimiter {
            limit,
            state: Mutex::new(LimiterState {
                in_flight: 0,
                next_start: None,
            }),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        while self.limit.max_in_flight > 0 && state.in_flight >= self.limit.max_in_flight {
            state = self.released.wait(state).unwrap_or_else(|p| p.into_inner());
        }
        state.in_flight += 1;
        let now = Instant::now();
        let start = state.next_start.map_or(now, |t| t.max(now));
        state.next_start = Some(start + Duration::from_millis(self.limit.min_interval_ms));
        drop(state);
        let wait = start.saturating_duration_since(now);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit(self)
    }
}

/// Shared plumbing: cache lookup, rate limiting, retries, counters.
struct HttpCore {
    spec: RemoteSpec,
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    limiter: RateLimiter,
    cache: Option<Arc<ResponseCache>>,
    requests: AtomicU64,
    cache_hits: AtomicU64,
    network_calls: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl HttpCore {
    fn new(spec: RemoteSpec, cache: Option<Arc<ResponseCache>>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs.max(1))))
            .build()
            .into();
        let api_key = std::env::var(spec.api_key_var())
            .ok()
            .filter(|k| !k.is_empty());
        HttpCore {
            base_url: spec.resolved_base_url(),
            limiter: RateLimiter::new(spec.rate_limit.clone()),
            agent,
            api_key,
            cache,
            spec,
            requests: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            network_calls: AtomicU64::new(0),
        }
    }

    fn backend_id(&self) -> String {
        format!("{}:{}", self.spec.name, self.spec.model_id)
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            network_calls: self.network_calls.load(Ordering::Relaxed),
        }
    }

    /// Returns the cached response for `request`, or performs the call and
    /// stores the extracted response.
    fn call(
        &self,
        request: &BackendRequest,
        path: &str,
        body: &Value,
        extract: impl Fn(&Value) -> Result<String>,
    ) -> Result<String> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(entry.response);
            }
        }
        let response = self.post_with_retries(path, body, extract)?;
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry::new(key, response.clone(), self.backend_id()))?;
        }
        Ok(response)
    }

    fn post_with_retries(
        &self,
        path: &str,
        body: &Value,
        extract: impl Fn(&Value) -> Result<String>,
    ) -> Result<String> {
        let url = format!("{}/{}", self.base_url, path);
        let policy = &self.spec.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let delay = policy.delay(attempt - 1);
                debug!(
                    "{}: retry {} after {:?}",
                    self.backend_id(),
                    attempt - 1,
                    delay
                );
                std::thread::sleep(delay);
            }
            match self.post_once(&url, body, &extract)? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry(reason) => {
                    warn!("{}: attempt {attempt} failed: {reason}", self.backend_id());
                    last_error = reason;
                }
            }
        }
        Err(Error::RetriesExhausted {
            backend: self.backend_id(),
            attempts,
            last_error,
        })
    }

    fn post_once(
        &self,
        url: &str,
        body: &Value,
        extract: &impl Fn(&Value) -> Result<String>,
    ) -> Result<Attempt> {
        let _permit = self.limiter.acquire();
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match req.send(serde_json::to_vec(body)?.as_slice()) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(format!("transport: {e}"))),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {e}"))),
        };
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text).map_err(|e| {
                    Error::backend(self.backend_id(), format!("invalid JSON response: {e}"))
                })?;
                extract(&value).map(Attempt::Done)
            }
            401 | 403 => Err(Error::Auth {
                backend: self.backend_id(),
                status,
            }),
            408 | 429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => Err(Error::backend(
                self.backend_id(),
                format!("HTTP {status}: {text}"),
            )),
        }
    }

    fn chat(&self, kind: RequestKind, prompt: &str) -> Result<String> {
        let spec = &self.spec;
        let mut request = BackendRequest::new(kind, &spec.model_id, prompt)
            .param("temperature", spec.temperature);
        let mut messages = Vec::new();
        if let Some(system) = &spec.system_prompt {
            request = request.param("system", system);
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        let mut body = json!({
            "model": spec.model_id,
            "messages": messages,
            "temperature": spec.temperature,
        });
        if let Some(max_tokens) = spec.max_tokens {
            request = request.param("max_tokens", max_tokens);
            body["max_tokens"] = json!(max_tokens);
        }
        let backend = self.backend_id();
        self.call(&request, "chat/completions", &body, |v| {
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| {
                    Error::backend(&backend, "response lacks choices[0].message.content")
                })
        })
    }
}

/// Listwise ranker over a chat-completion service.
pub struct RemoteRanker {
    core: HttpCore,
}

impl RemoteRanker {
    pub fn new(spec: RemoteSpec, cache: Option<Arc<ResponseCache>>) -> Self {
        RemoteRanker {
            core: HttpCore::new(spec, cache),
        }
    }
}

impl Ranker for RemoteRanker {
    fn id(&self) -> String {
        format!("remote:{}", self.core.backend_id())
    }

    fn rank(&self, request: &RankRequest<'_>) -> Result<String> {
        self.core.chat(RequestKind::Rank, request.prompt)
    }

    fn stats(&self) -> Option<BackendStats> {
        Some(self.core.stats())
    }
}

/// Tag-document generator served over a chat-completion endpoint.
pub struct RemoteGenerator {
    core: HttpCore,
}

impl RemoteGenerator {
    pub fn new(spec: RemoteSpec, cache: Option<Arc<ResponseCache>>) -> Self {
        RemoteGenerator {
            core: HttpCore::new(spec, cache),
        }
    }
}

impl Generator for RemoteGenerator {
    fn id(&self) -> String {
        format!("remote:{}", self.core.backend_id())
    }

    fn generate(&self, input: &AssembledInput) -> Result<String> {
        self.core.chat(RequestKind::Generate, &input.text)
    }

    fn stats(&self) -> Option<BackendStats> {
        Some(self.core.stats())
    }
}

pub struct RemoteEmbedder {
    core: HttpCore,
    session_dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(spec: RemoteSpec, cache: Option<Arc<ResponseCache>>) -> Self {
        RemoteEmbedder {
            core: HttpCore::new(spec, cache),
            session_dim: OnceLock::new(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.core.backend_id())
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let payload = serde_json::to_string(texts)?;
        let request = BackendRequest::new(RequestKind::Embed, &self.core.spec.model_id, payload);
        let body = json!({"model": self.core.spec.model_id, "input": texts});
        let backend = self.core.backend_id();
        let n = texts.len();
        let raw = self.core.call(&request, "embeddings", &body, |v| {
            let data = v
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::backend(&backend, "response lacks data array"))?;
            if data.len() != n {
                return Err(Error::backend(
                    &backend,
                    format!("{} embeddings for {n} inputs", data.len()),
                ));
            }
            let vectors = data
                .iter()
                .map(|d| {
                    d.get("embedding")
                        .cloned()
                        .ok_or_else(|| Error::backend(&backend, "data item lacks embedding"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(serde_json::to_string(&vectors)?)
        })?;
        let parsed: Vec<Vec<f32>> = serde_json::from_str(&raw)?;
        let vectors = parsed
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>>>()?;
        for v in &vectors {
            let expected = *self.session_dim.get_or_init(|| v.dim());
            if v.dim() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: v.dim(),
                });
            }
        }
        Ok(vectors)
    }

    fn stats(&self) -> Option<BackendStats> {
        Some(self.core.stats())
    }
}
