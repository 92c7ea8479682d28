use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{CompletionRequest, LlmBackend, LlmError};

pub const ENV_ENDPOINT: &str = "TOT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TOT_LLM_API_KEY";
pub const ENV_MODEL: &str = "TOT_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthHeader {
    pub name: String,
    /// Prepended to the key, e.g. `"Bearer "`.
    #[serde(default)]
    pub prefix: String,
}

impl Default for AuthHeader {
    fn default() -> Self {
        Self {
            name: "Authorization".into(),
            prefix: "Bearer ".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }

    /// Run `op` until it succeeds, fails with a non-retryable error, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match op() {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt + 1 < attempts => {
                    let delay = self.delay(attempt);
                    warn!(attempt, ?delay, error = %err, "retrying completion request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub auth_header: AuthHeader,
    /// Provider accepts `n` and returns several choices per call.
    pub native_n: bool,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            auth_header: AuthHeader::default(),
            native_n: false,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

impl HttpBackendConfig {
    /// Apply `TOT_LLM_ENDPOINT`, `TOT_LLM_API_KEY` and `TOT_LLM_MODEL`.
    pub fn apply_env(&mut self) {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = endpoint;
        }
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            self.api_key = Some(key);
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
    }
}

/// Chat-completion client speaking the common `{model, messages, ...}` JSON protocol.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        if config.endpoint.is_empty() {
            return Err(LlmError::InvalidRequest(format!(
                "no completion endpoint configured (set {ENV_ENDPOINT})"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest, n: usize) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        if n > 1 {
            body["n"] = json!(n);
        }
        body
    }

    fn call(&self, request: &CompletionRequest, n: usize) -> Result<Vec<String>, LlmError> {
        let body = self.body(request, n);
        self.config.retry.run(|| {
            let mut builder = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.config.api_key {
                builder = builder.header(
                    self.config.auth_header.name.as_str(),
                    format!("{}{}", self.config.auth_header.prefix, key),
                );
            }
            let response = builder
                .send()
                .map_err(|e| LlmError::Transport(e.to_string()))?;
            let status = response.status();
            let text = response
                .text()
                .map_err(|e| LlmError::Transport(e.to_string()))?;
            if !status.is_success() {
                return Err(LlmError::Provider {
                    status: status.as_u16(),
                    body: text,
                });
            }
            debug!(bytes = text.len(), "completion response");
            decode_choices(&text)
        })
    }
}

/// Extract the choice texts from a chat- or text-completion response body.
pub(crate) fn decode_choices(body: &str) -> Result<Vec<String>, LlmError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| LlmError::Malformed("missing `choices` array".into()))?;
    let texts = choices
        .iter()
        .map(|choice| {
            choice
                .pointer("/message/content")
                .or_else(|| choice.get("text"))
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| LlmError::Malformed("choice without text content".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if texts.is_empty() {
        return Err(LlmError::Malformed("empty `choices` array".into()));
    }
    Ok(texts)
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        request.validate()?;
        let n = request.n_samples;
        if n == 1 || request.temperature == 0.0 {
            let first = self.call(request, 1)?.swap_remove(0);
            return Ok(vec![first; n]);
        }
        if self.config.native_n {
            let texts = self.call(request, n)?;
            if texts.len() != n {
                return Err(LlmError::Malformed(format!(
                    "asked for {n} choices, provider returned {}",
                    texts.len()
                )));
            }
            return Ok(texts);
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|_| scope.spawn(|| self.call(request, 1).map(|mut t| t.swap_remove(0))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("completion worker panicked"))
                .collect()
        })
    }
}
