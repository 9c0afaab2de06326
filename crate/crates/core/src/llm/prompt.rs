use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    #[default]
    Movies,
    Books,
}

impl Domain {
    fn words(self) -> (&'static str, &'static str, &'static str, &'static str) {
        match self {
            Domain::Movies => ("watching", "film", "Watching", "movie"),
            Domain::Books => ("reading", "book", "Reading", "book"),
        }
    }
}

const PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. \
Write a response that appropriately completes the request.";

/// Option labels: `A`, `B`, ... in order.
pub fn option_label(i: usize) -> char {
    (b'A' + i as u8) as char
}

pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationPrompt {
    pub domain: Domain,
    pub history: Vec<String>,
    /// Candidate titles; option `i` is labeled [`option_label`]`(i)`.
    pub candidates: Vec<String>,
    pub knowledge: Option<String>,
    pub text: String,
}

impl RecommendationPrompt {
    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        (0..self.candidates.len()).map(option_label)
    }
}

fn quoted_list(items: impl IntoIterator<Item = String>) -> String {
    let parts: Vec<String> = items.into_iter().collect();
    format!("{{{}}}", parts.join(", "))
}

/// Renders the recommendation instruction. Knowledge text, if given, goes in
/// a `Knowledge:` block right before the options; its lines are joined by
/// single spaces.
pub fn build_prompt(
    history: &[String],
    candidates: &[String],
    m: usize,
    domain: Domain,
    knowledge: Option<&str>,
) -> Result<RecommendationPrompt, LlmError> {
    if history.is_empty() {
        return Err(LlmError::Prompt("history must contain at least one item".into()));
    }
    if candidates.len() != m {
        return Err(LlmError::Prompt(format!("expected {m} candidates, got {}", candidates.len())));
    }
    if m == 0 || m > MAX_OPTIONS {
        return Err(LlmError::Prompt(format!("candidate count {m} is outside 1..={MAX_OPTIONS}")));
    }
    let (verb, noun, cap_verb, pick) = domain.words();
    let hist = quoted_list(history.iter().map(|t| format!("\"{t}\"")));
    let opts = quoted_list(candidates.iter().enumerate().map(|(i, t)| format!("{}: \"{t}\"", option_label(i))));
    let knowledge = knowledge.map(str::trim).filter(|k| !k.is_empty()).map(|k| k.lines().collect::<Vec<_>>().join(" "));
    let mut text = format!(
        "{PREAMBLE} Instruction: Given the user's {verb} history, select a {noun} that is most likely to interest the user from the options. \
{cap_verb} history: {hist}."
    );
    if let Some(k) = &knowledge {
        text.push_str(&format!(" Knowledge: {k}."));
    }
    text.push_str(&format!(
        " Options: {opts}. Select a {pick} from options A to {} that the user is most likely to be interested in.",
        option_label(m - 1)
    ));
    Ok(RecommendationPrompt {
        domain,
        history: history.to_vec(),
        candidates: candidates.to_vec(),
        knowledge,
        text,
    })
}
