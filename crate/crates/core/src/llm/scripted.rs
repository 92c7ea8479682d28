//! Deterministic scripted completion backend for offline runs and tests.
//!
//! A transcript is an ordered list of rules. Each sample of a request is served
//! by the first rule that matches the request and still has responses left.
//! A request no rule can serve is a hard error.
//!
//! Transcript files are TOML:
//!
//! ```toml
//! [[rule]]
//! kind = "selecting-entities"    # optional; any prompt kind when absent
//! contains = ["Bob Dylan"]       # every substring must occur in the prompt
//! excludes = ["Beatrice"]        # no substring may occur in the prompt
//! responses = ["SELECT ENTITIES: Q392"]
//! repeat = false                 # keep serving the last response forever
//! ```

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmBackend, LlmError, PromptKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PromptKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excludes: Vec<String>,
    pub responses: Vec<String>,
    #[serde(default)]
    pub repeat: bool,
}

impl Rule {
    pub fn new(kind: PromptKind) -> Self {
        Self {
            kind: Some(kind),
            contains: Vec::new(),
            excludes: Vec::new(),
            responses: Vec::new(),
            repeat: false,
        }
    }

    pub fn any() -> Self {
        Self {
            kind: None,
            ..Self::new(PromptKind::Default)
        }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn excludes(mut self, needle: impl Into<String>) -> Self {
        self.excludes.push(needle.into());
        self
    }

    pub fn respond<I, S>(mut self, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.responses.extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        self.kind.is_none_or(|kind| kind == request.kind)
            && self.contains.iter().all(|s| request.prompt.contains(s.as_str()))
            && !self.excludes.iter().any(|s| request.prompt.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
}

impl Transcript {
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let transcript: Transcript =
            toml::from_str(text).map_err(|e| LlmError::Transcript(e.to_string()))?;
        if let Some(i) = transcript.rules.iter().position(|r| r.responses.is_empty()) {
            return Err(LlmError::Transcript(format!("rule #{i} has no responses")));
        }
        Ok(transcript)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("transcript serializes")
    }
}

#[derive(Debug)]
struct Cursor {
    rule: Rule,
    next: usize,
}

impl Cursor {
    fn exhausted(&self) -> bool {
        !self.rule.repeat && self.next >= self.rule.responses.len()
    }

    fn take(&mut self) -> String {
        let i = self.next.min(self.rule.responses.len() - 1);
        self.next += 1;
        self.rule.responses[i].clone()
    }
}

#[derive(Debug, Default)]
struct OracleState {
    cursors: Vec<Cursor>,
    log: Vec<(PromptKind, String)>,
}

/// Scripted [`LlmBackend`]. Consumption is serialized, so a fixed transcript and
/// a fixed request order reproduce the same outputs bit for bit.
#[derive(Debug, Default)]
pub struct ScriptedOracle {
    state: Mutex<OracleState>,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_transcript(transcript: Transcript) -> Self {
        let oracle = Self::new();
        for rule in transcript.rules {
            oracle.push(rule);
        }
        oracle
    }

    pub fn rule(self, rule: Rule) -> Self {
        self.push(rule);
        self
    }

    pub fn push(&self, rule: Rule) {
        assert!(!rule.responses.is_empty(), "scripted rule needs at least one response");
        self.state
            .lock()
            .expect("oracle lock")
            .cursors
            .push(Cursor { rule, next: 0 });
    }

    /// Every request served so far, in order.
    pub fn calls(&self) -> Vec<(PromptKind, String)> {
        self.state.lock().expect("oracle lock").log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("oracle lock").log.len()
    }

    pub fn calls_of(&self, kind: PromptKind) -> Vec<String> {
        self.calls()
            .into_iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, p)| p)
            .collect()
    }
}

impl LlmBackend for ScriptedOracle {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        request.validate()?;
        let mut state = self.state.lock().expect("oracle lock");
        state.log.push((request.kind, request.prompt.clone()));
        let draws = if request.temperature == 0.0 { 1 } else { request.n_samples };
        let mut out = Vec::with_capacity(request.n_samples);
        for _ in 0..draws {
            let cursor = state
                .cursors
                .iter_mut()
                .find(|c| !c.exhausted() && c.rule.matches(request))
                .ok_or_else(|| LlmError::Unmatched {
                    kind: request.kind.as_str(),
                    excerpt: excerpt(&request.prompt),
                })?;
            out.push(cursor.take());
        }
        if draws == 1 {
            let only = out.pop().expect("one draw");
            out = vec![only; request.n_samples];
        }
        Ok(out)
    }
}

fn excerpt(prompt: &str) -> String {
    const KEEP: usize = 240;
    let chars: Vec<char> = prompt.chars().collect();
    if chars.len() <= KEEP {
        prompt.to_string()
    } else {
        let tail: String = chars[chars.len() - KEEP..].iter().collect();
        format!("...{tail}")
    }
}
