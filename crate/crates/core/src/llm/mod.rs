//! Recommendation prompts, a chat-completion client, answer parsing, and
//! deterministic mock models.

mod client;
mod mock;
mod parse;
mod prompt;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::ChatClient;
pub use mock::{MockLlm, MockPolicy, ScoreFn};
pub use parse::{from_letter_logprobs, label, parse_choice, ChoiceDistribution, Provenance, Unparseable};
pub use prompt::{build_prompt, option_label, Domain, RecommendationPrompt, MAX_OPTIONS};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("llm config: {0}")]
    Config(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimit { attempts: u32 },
    #[error("server error HTTP {status} after {attempts} attempt(s): {body}")]
    Server { status: u16, attempts: u32, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Timeout { .. } | LlmError::RateLimit { .. } | LlmError::Server { .. } | LlmError::Transport { .. }
        )
    }

    /// Failures of the remote service itself, as opposed to local misuse.
    pub fn is_remote(&self) -> bool {
        self.is_retryable() || matches!(self, LlmError::Auth { .. } | LlmError::BadResponse(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LlmMode {
    /// History and options only.
    #[default]
    Text,
    /// Retrieved triples rendered into a `Knowledge:` block.
    TextTriples,
    /// Soft prompt exported next to the request; text prompt as in `Text`.
    SoftPromptExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    pub model: String,
    /// Identity of the frozen model weights, recorded in artifacts only.
    pub model_ref: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub mode: LlmMode,
    pub domain: Domain,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Ask for per-token log-probabilities and rank by option-letter logprob.
    pub logprobs: bool,
    /// Without logprobs, ask for a numbered top-`rank_top` list (0 disables).
    pub rank_top: usize,
    pub max_in_flight: usize,
    /// JSON-lines file receiving one record per completion call.
    pub audit_log: Option<PathBuf>,
    /// Whether the endpoint consumes exported soft prompts.
    pub prefix_support: bool,
    pub max_knowledge_triples: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: None,
            model: String::new(),
            model_ref: None,
            temperature: 0.0,
            max_tokens: 64,
            seed: Some(0),
            mode: LlmMode::Text,
            domain: Domain::Movies,
            api_key_env: "KRAGREC_LLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            logprobs: false,
            rank_top: 5,
            max_in_flight: 4,
            audit_log: None,
            prefix_support: false,
            max_knowledge_triples: 50,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config(format!("temperature {} must be a finite value >= 0", self.temperature)));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    /// Caller-chosen label, usually the user id; scripted mocks key on it.
    pub tag: &'a str,
    pub prompt: &'a RecommendationPrompt,
    pub soft_prompt: Option<&'a Path>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub request_id: String,
    pub text: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    /// `(token, logprob)` alternatives for the first answer token.
    pub letter_logprobs: Option<Vec<(String, f64)>>,
    pub source: Source,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?.max(0.0) / 1e3))
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

/// Turns a completion into a candidate distribution: letter logprobs when
/// present, text parsing otherwise. Mock output is labeled as such.
pub fn interpret(completion: &Completion, candidates: &[String]) -> Result<ChoiceDistribution, Unparseable> {
    let mut dist = match completion.letter_logprobs.as_deref().and_then(|lp| from_letter_logprobs(lp, candidates.len())) {
        Some(d) => d,
        None => parse_choice(&completion.text, candidates)?,
    };
    if completion.source == Source::Mock {
        dist.provenance = Provenance::Mock;
    }
    Ok(dist)
}
