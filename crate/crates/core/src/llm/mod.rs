//! Text-completion backends.
//!
//! [`LlmBackend::complete`] always returns exactly `n_samples` texts on success.
//! A request at temperature 0 must yield identical samples.

mod http;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{
    AuthHeader, HttpBackend, HttpBackendConfig, RetryPolicy, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use scripted::{Rule, ScriptedOracle, Transcript};

/// Which prompt template produced a request. Backends never need it; scripted
/// oracles match on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Default,
    SelectingEntities,
    SelectingRelation,
    Evaluate,
    EvaluateAnswer,
    ExtractEntities,
    LinkEntity,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Default => "default",
            PromptKind::SelectingEntities => "selecting-entities",
            PromptKind::SelectingRelation => "selecting-relation",
            PromptKind::Evaluate => "evaluate",
            PromptKind::EvaluateAnswer => "evaluate-answer",
            PromptKind::ExtractEntities => "extract-entities",
            PromptKind::LinkEntity => "link-entity",
        }
    }
}

pub const ACTION_MAX_TOKENS: u32 = 256;
pub const EVAL_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub kind: PromptKind,
    pub prompt: String,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(kind: PromptKind, prompt: impl Into<String>) -> Self {
        let max_tokens = match kind {
            PromptKind::Evaluate | PromptKind::EvaluateAnswer => EVAL_MAX_TOKENS,
            _ => ACTION_MAX_TOKENS,
        };
        Self {
            kind,
            prompt: prompt.into(),
            temperature: 0.0,
            n_samples: 1,
            max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n_samples == 0 {
            return Err(LlmError::InvalidRequest("n_samples must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted rule matches {kind} prompt: {excerpt}")]
    Unmatched { kind: &'static str, excerpt: String },
    #[error("transcript error: {0}")]
    Transcript(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}
