//! Single choke point for LLM interaction: a chat-completion client with
//! fixed decoding defaults, a retry policy, and a deterministic scripted
//! mock for offline runs. No other module performs network I/O.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use sha2::{Digest, Sha256};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
/// Retry schedule for transient transport failures.
pub const RETRY_BACKOFF: [Duration; 3] = [
    Duration::from_secs(1),
    Duration::from_secs(2),
    Duration::from_secs(4),
];
pub const DEFAULT_CONCURRENCY_CAP: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for fingerprint {fingerprint}")]
    MissingScript { fingerprint: String },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("gateway is not configured (no endpoint and no mock script)")]
    Unconfigured,
    #[error("failed to read mock script {path}: {message}")]
    BadScript { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        request_fingerprint(&self.system_prompt, &self.user_prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency: Duration,
}

/// Platform-stable fingerprint of a request: SHA-256 over the length-prefixed
/// UTF-8 bytes of both prompts.
pub fn request_fingerprint(system_prompt: &str, user_prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((system_prompt.len() as u64).to_le_bytes());
    hasher.update(system_prompt.as_bytes());
    hasher.update((user_prompt.len() as u64).to_le_bytes());
    hasher.update(user_prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Extract the first fenced JSON block from a completion. Accepts an
/// optional language tag on the opening fence; the block must parse once
/// extracted, which callers check themselves.
pub fn extract_fenced_json(text: &str) -> Option<String> {
    let parts: Vec<&str> = text.split("```").collect();
    // Odd-indexed segments sit inside fences.
    let mut i = 1;
    while i < parts.len() {
        let segment = parts[i];
        let body = match segment.find('\n') {
            Some(nl) => {
                let tag = segment[..nl].trim();
                if tag.is_empty() || tag.eq_ignore_ascii_case("json") {
                    segment[nl + 1..].trim()
                } else if tag.starts_with('{') || tag.starts_with('[') {
                    segment.trim()
                } else {
                    ""
                }
            }
            None => segment.trim(),
        };
        if body.starts_with('{') || body.starts_with('[') {
            return Some(body.to_string());
        }
        i += 2;
    }
    None
}

pub trait LlmGateway: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Record of a mock request that had no scripted response; kept so fixture
/// authors can turn misses into script entries.
#[derive(Debug, Clone)]
pub struct MissedRequest {
    pub fingerprint: String,
    pub system_prompt: String,
    pub user_prompt: String,
}

/// Deterministic scripted gateway. Identical requests always produce
/// identical responses; an unmatched fingerprint is an error, never a
/// silent default.
#[derive(Default)]
pub struct MockGateway {
    script: BTreeMap<String, String>,
    misses: Mutex<Vec<MissedRequest>>,
}

impl MockGateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Script a response for the request formed by these two prompts.
    pub fn script(&mut self, system_prompt: &str, user_prompt: &str, response: &str) {
        self.script_fingerprint(request_fingerprint(system_prompt, user_prompt), response);
    }

    pub fn script_fingerprint(&mut self, fingerprint: String, response: &str) {
        self.script.insert(fingerprint, response.to_string());
    }

    /// Load a `*.mockscript.json` file: a JSON object mapping fingerprint to
    /// response text.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| GatewayError::BadScript {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let script: BTreeMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| GatewayError::BadScript {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(MockGateway {
            script,
            misses: Mutex::new(Vec::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Requests seen so far that had no script entry.
    pub fn recorded_misses(&self) -> Vec<MissedRequest> {
        self.misses.lock().unwrap().clone()
    }
}

impl LlmGateway for MockGateway {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let fingerprint = request.fingerprint();
        match self.script.get(&fingerprint) {
            Some(text) => Ok(ChatResponse {
                text: text.clone(),
                usage: None,
                latency: Duration::ZERO,
            }),
            None => {
                self.misses.lock().unwrap().push(MissedRequest {
                    fingerprint: fingerprint.clone(),
                    system_prompt: request.system_prompt.clone(),
                    user_prompt: request.user_prompt.clone(),
                });
                Err(GatewayError::MissingScript { fingerprint })
            }
        }
    }
}

/// Gateway placeholder used when neither an endpoint nor a mock script is
/// configured; every call fails and callers degrade per their contracts.
pub struct UnconfiguredGateway;

impl LlmGateway for UnconfiguredGateway {
    fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Err(GatewayError::Unconfigured)
    }
}

/// Outcome classification for the retry loop.
pub enum Attempt<T> {
    Ok(T),
    Retryable(String),
    Fatal(String),
}

/// Run `f` up to `RETRY_BACKOFF.len()` times, sleeping the scheduled backoff
/// between retryable failures.
pub fn with_retries<T>(mut f: impl FnMut() -> Attempt<T>) -> Result<T, GatewayError> {
    with_retries_sleeping(&mut f, |d| std::thread::sleep(d))
}

fn with_retries_sleeping<T>(
    f: &mut impl FnMut() -> Attempt<T>,
    mut sleep: impl FnMut(Duration),
) -> Result<T, GatewayError> {
    let mut last = String::new();
    for (attempt, backoff) in RETRY_BACKOFF.iter().enumerate() {
        match f() {
            Attempt::Ok(v) => return Ok(v),
            Attempt::Fatal(message) => {
                return Err(GatewayError::Transport {
                    attempts: attempt + 1,
                    message,
                })
            }
            Attempt::Retryable(message) => {
                last = message;
                if attempt + 1 < RETRY_BACKOFF.len() {
                    sleep(*backoff);
                }
            }
        }
    }
    Err(GatewayError::Transport {
        attempts: RETRY_BACKOFF.len(),
        message: last,
    })
}

/// Simple counting semaphore bounding in-flight requests.
struct RequestCap {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl RequestCap {
    fn new(cap: usize) -> Self {
        RequestCap {
            permits: Mutex::new(cap.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpGatewayConfig {
    pub base_url: String,
    pub api_key: String,
    pub model_id: String,
    pub concurrency_cap: usize,
    pub request_timeout: Duration,
}

impl HttpGatewayConfig {
    /// Read endpoint settings from `CA_LLM_BASE_URL`, `CA_LLM_API_KEY`, and
    /// `CA_LLM_MODEL`. Returns None when no base URL is set.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var("CA_LLM_BASE_URL").ok()?;
        Some(HttpGatewayConfig {
            base_url,
            api_key: std::env::var("CA_LLM_API_KEY").unwrap_or_default(),
            model_id: std::env::var("CA_LLM_MODEL").unwrap_or_default(),
            concurrency_cap: DEFAULT_CONCURRENCY_CAP,
            request_timeout: Duration::from_secs(120),
        })
    }
}

/// Live chat-completion client over an OpenAI-style HTTP endpoint.
pub struct HttpGateway {
    config: HttpGatewayConfig,
    client: reqwest::blocking::Client,
    cap: RequestCap,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

#[derive(Deserialize)]
struct CompletionUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
    usage: Option<CompletionUsage>,
}

impl HttpGateway {
    pub fn new(config: HttpGatewayConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let cap = RequestCap::new(config.concurrency_cap);
        Ok(HttpGateway { config, client, cap })
    }

    fn send_once(&self, request: &ChatRequest) -> Attempt<CompletionReply> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let model = if request.model_id.is_empty() {
            self.config.model_id.clone()
        } else {
            request.model_id.clone()
        };
        let body = serde_json::json!({
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        let sent = self
            .client
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send();
        match sent {
            Err(e) if e.is_timeout() => Attempt::Retryable(format!("timeout: {e}")),
            Err(e) => Attempt::Fatal(e.to_string()),
            Ok(resp) => {
                let status = resp.status();
                if status.as_u16() == 429 || status.is_server_error() {
                    return Attempt::Retryable(format!("http {status}"));
                }
                if !status.is_success() {
                    return Attempt::Fatal(format!("http {status}"));
                }
                match resp.json::<CompletionReply>() {
                    Ok(reply) if !reply.choices.is_empty() => Attempt::Ok(reply),
                    Ok(_) => Attempt::Fatal("empty choices in completion".into()),
                    Err(e) => Attempt::Fatal(format!("bad completion body: {e}")),
                }
            }
        }
    }
}

impl LlmGateway for HttpGateway {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        self.cap.acquire();
        let start = Instant::now();
        let result = with_retries(|| self.send_once(request));
        self.cap.release();
        let reply = result?;
        let usage = reply.usage.and_then(|u| {
            Some(TokenUsage {
                prompt_tokens: u.prompt_tokens?,
                completion_tokens: u.completion_tokens?,
            })
        });
        Ok(ChatResponse {
            text: reply.choices[0].message.content.clone(),
            usage,
            latency: start.elapsed(),
        })
    }
}
