//! Chat-completion backends: scripted mock, on-disk response cache and an
//! HTTP client for chat-completions compatible services.

use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tsv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user(prompt: impl Into<String>) -> Self {
        ChatRequest {
            system: String::new(),
            user: prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("no mock rule matches the prompt: {0}")]
    UnmatchedPrompt(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("credential rejected: {0}")]
    AuthError(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait ChatBackend: Send + Sync {
    /// Distinguishes backends in cache keys.
    fn identity(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// SHA-256 over every request field and the backend tag, lowercase hex.
pub fn cache_key(request: &ChatRequest, backend_tag: &str) -> String {
    let mut h = Sha256::new();
    for part in [backend_tag.as_bytes(), request.system.as_bytes(), request.user.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(request.temperature.to_bits().to_le_bytes());
    h.update(request.max_tokens.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    /// All substrings must occur in the prompt.
    pub matchers: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

impl MockScript {
    /// Rows are `matcher<TAB>response`; `&&` joins substrings that must all
    /// match; an empty matcher sets the default; `#` starts a comment line.
    /// Responses use the TSV escapes, so `\n` is a newline.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, BackendError> {
        let mut script = MockScript::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f = tsv::split(&line);
            if f.len() != 2 {
                return Err(BackendError::Script {
                    line: i + 1,
                    reason: format!("expected 2 tab-separated fields, found {}", f.len()),
                });
            }
            let matchers: Vec<String> = f[0]
                .split("&&")
                .map(str::trim)
                .filter(|m| !m.is_empty())
                .map(str::to_string)
                .collect();
            if matchers.is_empty() {
                script.default = Some(f[1].clone());
            } else {
                script.rules.push(MockRule {
                    matchers,
                    response: f[1].clone(),
                });
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Self::parse(io::BufReader::new(fs::File::open(path)?))
    }

    pub fn respond(&self, prompt: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matchers.iter().all(|m| prompt.contains(m.as_str())))
            .map(|r| r.response.as_str())
            .or(self.default.as_deref())
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rules {
            for m in &r.matchers {
                h.update(m.as_bytes());
                h.update([0]);
            }
            h.update([1]);
            h.update(r.response.as_bytes());
            h.update([2]);
        }
        if let Some(d) = &self.default {
            h.update(d.as_bytes());
        }
        hex::encode(&h.finalize()[..6])
    }
}

/// Answers from a script; the first matching rule wins.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    tag: String,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let tag = format!("mock:{}", script.digest());
        MockBackend {
            script,
            tag,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for MockBackend {
    fn identity(&self) -> String {
        self.tag.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = if request.system.is_empty() {
            request.user.clone()
        } else {
            format!("{}\n{}", request.system, request.user)
        };
        self.script.respond(&prompt).map(str::to_string).ok_or_else(|| {
            let head: String = request.user.chars().take(80).collect();
            BackendError::UnmatchedPrompt(head)
        })
    }
}

/// Serves repeated requests from files named by their cache key.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn store(&self, key: &str, response: &str) -> io::Result<()> {
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        fs::write(&tmp, response)?;
        fs::rename(&tmp, self.dir.join(key))
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = cache_key(request, &self.inner.identity());
        match fs::read_to_string(self.dir.join(&key)) {
            Ok(text) => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(text);
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(request)?;
        self.store(&key, &response)?;
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 1000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Sleep before each retry; one fewer than the attempt count.
    pub fn delays(&self) -> Vec<Duration> {
        let factor = self.factor.max(1.0);
        (0..self.max_attempts.saturating_sub(1))
            .map(|i| Duration::from_millis((self.base_delay_ms as f64 * factor.powi(i as i32)) as u64))
            .collect()
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Token bucket refilled at `rate` tokens per second up to `burst`.
struct Bucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl Bucket {
    fn new(rate: f64, burst: f64) -> Self {
        Bucket {
            rate,
            burst: burst.max(1.0),
            state: Mutex::new((burst.max(1.0), Instant::now())),
        }
    }

    fn take(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap();
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.burst);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.rate)
            };
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; none sends no header.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub in_flight: usize,
    /// Requests per second; none disables rate limiting.
    pub rate_limit: Option<f64>,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 120,
            in_flight: 4,
            rate_limit: None,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
    bucket: Option<Bucket>,
}

enum Failure {
    Retry(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            None => None,
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::AuthError(format!("environment variable {var} is not set"))
            })?),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let bucket = config
            .rate_limit
            .filter(|r| *r > 0.0)
            .map(|r| Bucket::new(r, config.in_flight as f64));
        Ok(HttpBackend {
            gate: Gate::new(config.in_flight),
            config,
            api_key,
            client,
            bucket,
        })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Failure> {
        if let Some(bucket) = &self.bucket {
            bucket.take();
        }
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Retry(BackendError::Timeout { attempts: 1 })
            } else {
                Failure::Retry(BackendError::BackendUnavailable(e.to_string()))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Failure::Retry(BackendError::Timeout { attempts: 1 })
            } else {
                Failure::Retry(BackendError::BackendUnavailable(e.to_string()))
            }
        })?;
        match status.as_u16() {
            200..=299 => parse_completion(&text).map_err(Failure::Fatal),
            401 | 403 => Err(Failure::Fatal(BackendError::AuthError(format!(
                "status {}",
                status.as_u16()
            )))),
            408 | 429 | 500..=599 => Err(Failure::Retry(BackendError::BackendUnavailable(format!(
                "status {}",
                status.as_u16()
            )))),
            code => Err(Failure::Fatal(BackendError::Rejected {
                status: code,
                body: text.chars().take(500).collect(),
            })),
        }
    }
}

/// Text of the first choice in a chat-completions response body.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}:{}", self.config.endpoint, self.config.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if request.user.is_empty() {
            return Err(BackendError::InvalidRequest("empty user prompt".into()));
        }
        let body = self.body(request);
        let _permit = self.gate.acquire();
        let delays = self.config.retry.delays();
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = None;
        for n in 0..attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => {
                    log::warn!("chat request attempt {} failed: {e}", n + 1);
                    last = Some(e);
                }
            }
            if let Some(d) = delays.get(n as usize) {
                thread::sleep(*d);
            }
        }
        Err(match last {
            Some(BackendError::Timeout { .. }) => BackendError::Timeout { attempts },
            Some(e) => BackendError::BackendUnavailable(format!("{attempts} attempts failed, last: {e}")),
            None => BackendError::BackendUnavailable("no attempts made".into()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(text: &str) -> MockScript {
        MockScript::parse(text.as_bytes()).unwrap()
    }

    #[test]
    fn mock_rules_and_default() {
        let m = MockBackend::new(script(
            "# planner\nprovided description is enough\tAnswer = YES\\nREASON = ok\n\
             CCO&&Tanimoto\tAnswer = NO\\nREASON = low\n",
        ));
        let r = m
            .complete(&ChatRequest::user("... whether the provided description is enough ..."))
            .unwrap();
        assert_eq!(r, "Answer = YES\nREASON = ok");
        assert_eq!(
            m.complete(&ChatRequest::user("The Tanimoto of CCO")).unwrap(),
            "Answer = NO\nREASON = low"
        );
        assert!(matches!(
            m.complete(&ChatRequest::user("Tanimoto only")),
            Err(BackendError::UnmatchedPrompt(_))
        ));
        assert_eq!(m.calls(), 3);
        let d = MockBackend::new(script("\tfallback\n"));
        assert_eq!(d.complete(&ChatRequest::user("x")).unwrap(), "fallback");
        assert!(MockScript::parse("just one field\n".as_bytes()).is_err());
    }

    #[test]
    fn cache_keys() {
        let a = ChatRequest::user("p");
        assert_eq!(cache_key(&a, "t"), cache_key(&a.clone(), "t"));
        let mut b = a.clone();
        b.temperature = 0.7;
        assert_ne!(cache_key(&a, "t"), cache_key(&b, "t"));
        assert_ne!(cache_key(&a, "t"), cache_key(&a, "u"));
        let mut c = a.clone();
        c.max_tokens = 1;
        assert_ne!(cache_key(&a, "t"), cache_key(&c, "t"));
        // field boundaries are length-prefixed
        let x = ChatRequest { system: "ab".into(), ..ChatRequest::user("c") };
        let y = ChatRequest { system: "a".into(), ..ChatRequest::user("bc") };
        assert_ne!(cache_key(&x, "t"), cache_key(&y, "t"));
        assert_eq!(cache_key(&a, "t").len(), 64);
    }

    #[test]
    fn cache_serves_second_request() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::new(script("\tsame bytes \\t here\n")));
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        let req = ChatRequest::user("hello");
        let first = cached.complete(&req).unwrap();
        let second = cached.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(mock.calls(), 1);
        assert_eq!((cached.hits(), cached.misses()), (1, 1));
        // survives a new wrapper over the same directory
        let again = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        assert_eq!(again.complete(&req).unwrap(), first);
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn retry_schedule() {
        let d = RetryPolicy::default().delays();
        assert_eq!(
            d,
            [1, 2, 4, 8].map(Duration::from_secs).to_vec()
        );
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(RetryPolicy { max_attempts: 1, ..Default::default() }.delays().is_empty());
    }

    #[test]
    fn completion_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Answer = YES"}}]}"#;
        assert_eq!(parse_completion(body).unwrap(), "Answer = YES");
        assert!(parse_completion("{}").is_err());
        assert!(parse_completion("not json").is_err());
    }

    #[test]
    fn missing_credential_variable() {
        let cfg = HttpConfig {
            api_key_env: Some("MOLRAG_TEST_UNSET_VARIABLE".into()),
            ..Default::default()
        };
        assert!(matches!(HttpBackend::new(cfg), Err(BackendError::AuthError(_))));
    }
}
