//! LLM client implementations with IO: the live chat-completions client, the
//! replay-fixture client for recorded runs, and composable retry /
//! rate-limit wrappers.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

use shield_core::client::{ClientConfig, ClientError, LlmClient};

use crate::error::AppError;

/// When set, constructing the live client fails. Offline test runs set this
/// to prove that mock/replay code paths never touch the network.
pub const FORBID_NETWORK_ENV: &str = "SHIELD_FORBID_NETWORK";

/// Live chat-completions client (OpenAI-style endpoint). One user message
/// per request, decoding parameters from the client config.
#[derive(Debug)]
pub struct HttpLlmClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    config: ClientConfig,
}

impl HttpLlmClient {
    pub fn new(endpoint: String, api_key: String, config: ClientConfig) -> Result<Self, AppError> {
        if std::env::var_os(FORBID_NETWORK_ENV).is_some() {
            return Err(AppError::Transport {
                message: format!("{FORBID_NETWORK_ENV} is set; refusing to build a network client"),
            });
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(Self {
            agent,
            endpoint,
            api_key,
            config,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl LlmClient for HttpLlmClient {
    fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let body = serde_json::json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.decoding.temperature,
            "top_p": self.config.decoding.top_p,
        });
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| ClientError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Transport("response had no choices".to_string()))
    }
}

#[derive(Debug, Deserialize)]
struct ReplayRecord {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    text: Option<String>,
    response: String,
}

/// Replays recorded responses. Lookup is by exact prompt first, then by the
/// `Text:` payload our templates embed, so fixtures can be written either
/// way. Unseen inputs are an error, never a guess.
pub struct ReplayClient {
    config: ClientConfig,
    by_prompt: BTreeMap<String, String>,
    by_text: BTreeMap<String, String>,
    calls: AtomicU64,
}

impl ReplayClient {
    pub fn from_path(path: &Path, config: ClientConfig) -> Result<Self, AppError> {
        let file = std::fs::File::open(path)
            .map_err(|e| AppError::storage(format!("cannot open {}: {e}", path.display())))?;
        let mut by_prompt = BTreeMap::new();
        let mut by_text = BTreeMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| {
                AppError::storage(format!("{}:{}: read error: {e}", path.display(), i + 1))
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                AppError::data(format!("{}:{}: invalid JSON: {e}", path.display(), i + 1))
            })?;
            if record.prompt.is_none() && record.text.is_none() {
                return Err(AppError::data(format!(
                    "{}:{}: record needs `prompt` or `text`",
                    path.display(),
                    i + 1
                )));
            }
            if let Some(prompt) = record.prompt {
                by_prompt.insert(prompt, record.response.clone());
            }
            if let Some(text) = record.text {
                by_text.insert(text, record.response);
            }
        }
        Ok(Self {
            config,
            by_prompt,
            by_text,
            calls: AtomicU64::new(0),
        })
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// The payload after the last `Text:` marker of our own templates.
    fn query_text(prompt: &str) -> Option<&str> {
        let at = prompt.rfind("Text:")?;
        let tail = prompt[at + "Text:".len()..].trim_end();
        let tail = tail.strip_suffix("Label:").unwrap_or(tail);
        Some(tail.trim().trim_matches('"').trim())
    }
}

impl LlmClient for ReplayClient {
    fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(response) = self.by_prompt.get(prompt) {
            return Ok(response.clone());
        }
        if let Some(text) = Self::query_text(prompt) {
            if let Some(response) = self.by_text.get(text) {
                return Ok(response.clone());
            }
        }
        let preview: String = prompt.chars().take(80).collect();
        Err(ClientError::UnknownInput(preview))
    }
}

/// Retries transient transport failures with exponential backoff (base delay
/// doubling per attempt). Retry count comes from the inner client's config.
pub struct RetryingClient<'a> {
    inner: &'a (dyn LlmClient + Sync),
    base_delay: Duration,
}

impl<'a> RetryingClient<'a> {
    pub fn new(inner: &'a (dyn LlmClient + Sync)) -> Self {
        Self {
            inner,
            base_delay: Duration::from_secs(1),
        }
    }

    /// Shorter backoff for tests.
    pub fn with_base_delay(mut self, base_delay: Duration) -> Self {
        self.base_delay = base_delay;
        self
    }
}

impl LlmClient for RetryingClient<'_> {
    fn config(&self) -> &ClientConfig {
        self.inner.config()
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let max_retries = self.inner.config().max_retries;
        let mut delay = self.base_delay;
        let mut attempt = 0;
        loop {
            match self.inner.complete(prompt) {
                Ok(response) => return Ok(response),
                Err(ClientError::Transport(message)) if attempt < max_retries => {
                    attempt += 1;
                    let _ = message;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// Spaces out request starts so the whole process stays under a calls/sec
/// budget. Shared by extraction and the one-shot baseline.
pub struct RateLimiter {
    min_interval: Duration,
    last_start: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// `calls_per_sec <= 0` disables limiting.
    pub fn new(calls_per_sec: f64) -> Self {
        let min_interval = if calls_per_sec > 0.0 {
            Duration::from_secs_f64(1.0 / calls_per_sec)
        } else {
            Duration::ZERO
        };
        Self {
            min_interval,
            last_start: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        loop {
            let wait = {
                let mut last = self.last_start.lock().expect("limiter lock");
                let now = Instant::now();
                match *last {
                    Some(prev) if now.duration_since(prev) < self.min_interval => {
                        Some(self.min_interval - now.duration_since(prev))
                    }
                    _ => {
                        *last = Some(now);
                        None
                    }
                }
            };
            match wait {
                Some(d) => std::thread::sleep(d),
                None => return,
            }
        }
    }
}

/// Rate-limits every call to the inner client. Compose inside the retry
/// wrapper so each retry attempt pays the limiter too.
pub struct RateLimitedClient<'a> {
    inner: &'a (dyn LlmClient + Sync),
    limiter: &'a RateLimiter,
}

impl<'a> RateLimitedClient<'a> {
    pub fn new(inner: &'a (dyn LlmClient + Sync), limiter: &'a RateLimiter) -> Self {
        Self { inner, limiter }
    }
}

impl LlmClient for RateLimitedClient<'_> {
    fn config(&self) -> &ClientConfig {
        self.inner.config()
    }

    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.limiter.acquire();
        self.inner.complete(prompt)
    }
}
