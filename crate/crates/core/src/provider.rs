//! Completion backends: a chat-completions HTTP client and a scripted
//! provider that replays canned responses deterministically.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::prompt::CompletionRequest;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k";
pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("script entry {index} expects the request to contain {expected:?}")]
    ScriptMismatch { index: usize, expected: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout
                | ProviderError::RateLimited
                | ProviderError::Transport(_)
                | ProviderError::Http {
                    status: 500..=599,
                    ..
                }
        )
    }
}

/// A completion backend. Implementations must return text that contains
/// none of the request's stop sequences.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;

    /// Short label reported by the health endpoint.
    fn mode(&self) -> &'static str;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }

    fn mode(&self) -> &'static str {
        (**self).mode()
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring the request must contain; `None` matches anything.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    pub fn any(response: impl Into<String>) -> Self {
        Self {
            matcher: None,
            response: response.into(),
        }
    }

    pub fn matching(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Some(needle.into()),
            response: response.into(),
        }
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    queue: VecDeque<ScriptEntry>,
    served: usize,
    log: Vec<CompletionRequest>,
}

/// Replays a fixed queue of responses in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(script: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            state: Mutex::new(ScriptState {
                queue: script.into_iter().collect(),
                ..Default::default()
            }),
        }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().map(ScriptEntry::any))
    }

    /// Loads a JSON array of `{"match": ..., "response": ...}` objects.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.lock().queue.push_back(entry);
    }

    /// Every request seen so far, in arrival order.
    pub fn log(&self) -> Vec<CompletionRequest> {
        self.lock().log.clone()
    }

    pub fn remaining(&self) -> usize {
        self.lock().queue.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut state = self.lock();
        state.log.push(request.clone());
        let served = state.served;
        let Some(entry) = state.queue.front() else {
            return Err(ProviderError::ScriptExhausted { served });
        };
        if let Some(needle) = &entry.matcher {
            if !request.full_text().contains(needle.as_str()) {
                return Err(ProviderError::ScriptMismatch {
                    index: served,
                    expected: needle.clone(),
                });
            }
        }
        let entry = state.queue.pop_front().expect("front checked above");
        state.served += 1;
        Ok(truncate_at_stop(&entry.response, &request.stop_sequences))
    }

    fn mode(&self) -> &'static str {
        "scripted"
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_source: String,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_name: DEFAULT_MODEL.to_string(),
            api_key_source: DEFAULT_API_KEY_ENV.to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    endpoint: Option<String>,
    model: Option<String>,
    timeout_ms: Option<u64>,
    max_retries: Option<u32>,
    api_key_env: Option<String>,
}

impl ProviderConfig {
    /// Reads `endpoint`, `model`, `timeout_ms`, `max_retries` and
    /// `api_key_env` from TOML; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, ProviderError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        let mut config = Self::default();
        if let Some(v) = file.endpoint {
            config.endpoint_url = v;
        }
        if let Some(v) = file.model {
            config.model_name = v;
        }
        if let Some(v) = file.timeout_ms {
            config.timeout = Duration::from_millis(v);
        }
        if let Some(v) = file.max_retries {
            config.max_retries = v;
        }
        if let Some(v) = file.api_key_env {
            config.api_key_source = v;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout.is_zero() {
            return Err(ProviderError::Config("timeout must be positive".into()));
        }
        if self.endpoint_url.trim().is_empty() {
            return Err(ProviderError::Config("endpoint is empty".into()));
        }
        Ok(())
    }
}

/// Chat-completions client. Blocking; call it off any async executor.
pub struct HttpProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    backoff_base: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpProvider {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_source).ok();
        Ok(Self::with_api_key(config, api_key))
    }

    pub fn with_api_key(config: ProviderConfig, api_key: Option<String>) -> Self {
        Self {
            config,
            api_key,
            backoff_base: Duration::from_millis(250),
            client: OnceLock::new(),
        }
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, ProviderError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(self.client.get_or_init(|| client))
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system_message {
            messages.push(json!({"role": "system", "content": system}));
        }
        for user in &request.user_messages {
            messages.push(json!({"role": "user", "content": user}));
        }
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, ProviderError> {
        let mut builder = self.client()?.post(&self.config.endpoint_url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::AuthFailure(text)),
            429 => return Err(ProviderError::RateLimited),
            _ => return Err(ProviderError::Http { status, body: text }),
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::MalformedResponse("missing choices[0].message.content".into())
            })
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(truncate_at_stop(&text, &request.stop_sequences)),
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let delay = self.backoff_base * 2u32.saturating_pow(attempt);
                    tracing::warn!(error = %e, attempt, ?delay, "completion failed, retrying");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn mode(&self) -> &'static str {
        "http"
    }
}
