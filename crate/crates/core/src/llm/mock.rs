use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::prompt::option_label;
use super::{Completion, CompletionRequest, LanguageModel, LlmError, RecommendationPrompt, Source};

/// Score for candidate `i` of a prompt; higher is preferred.
pub type ScoreFn = Arc<dyn Fn(&RecommendationPrompt, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum MockPolicy {
    /// Always answers `A`.
    AlwaysFirst,
    /// Answers with a numbered list of every option, best score first,
    /// ties by option order.
    InjectedScores(ScoreFn),
    /// Fixed response per request tag, `default` for unknown tags.
    Scripted { responses: HashMap<String, String>, default: String },
}

impl fmt::Debug for MockPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockPolicy::AlwaysFirst => f.write_str("AlwaysFirst"),
            MockPolicy::InjectedScores(_) => f.write_str("InjectedScores(..)"),
            MockPolicy::Scripted { responses, .. } => write!(f, "Scripted({} responses)", responses.len()),
        }
    }
}

#[derive(Debug)]
pub struct MockLlm {
    policy: MockPolicy,
    counter: AtomicU64,
}

impl MockLlm {
    pub fn new(policy: MockPolicy) -> Self {
        MockLlm { policy, counter: AtomicU64::new(0) }
    }

    pub fn scripted<I, K, V>(responses: I, default: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        MockLlm::new(MockPolicy::Scripted {
            responses: responses.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            default: default.into(),
        })
    }

    pub fn respond(&self, tag: &str, prompt: &RecommendationPrompt) -> String {
        match &self.policy {
            MockPolicy::AlwaysFirst => "A".to_owned(),
            MockPolicy::InjectedScores(score) => {
                let mut order: Vec<(usize, f64)> = (0..prompt.candidates.len()).map(|i| (i, score(prompt, i))).collect();
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                order
                    .iter()
                    .enumerate()
                    .map(|(r, (i, _))| format!("{}. {}", r + 1, option_label(*i)))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            MockPolicy::Scripted { responses, default } => responses.get(tag).unwrap_or(default).clone(),
        }
    }
}

impl LanguageModel for MockLlm {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(Completion {
            request_id: format!("mock-{}-{n}", request.tag),
            text: self.respond(request.tag, request.prompt),
            latency: Duration::ZERO,
            letter_logprobs: None,
            source: Source::Mock,
        })
    }
}
