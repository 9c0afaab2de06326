//! OpenAI-compatible chat-completion client.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Completion, CompletionRequest, LanguageModel, LlmConfig, LlmError, Source};

/// Appended to the prompt when a ranked answer is requested.
fn ranking_request(n: usize) -> String {
    format!("Rank the top {n} options from most to least likely as a numbered list of option letters, e.g. \"1. A\".")
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct ChatClient {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    config: LlmConfig,
    gate: Gate,
    audit: Option<Mutex<BufWriter<File>>>,
    counter: AtomicU64,
    backoff: Duration,
    warned_prefix: std::sync::Once,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient").field("endpoint", &self.endpoint).field("model", &self.config.model).finish()
    }
}

impl ChatClient {
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let endpoint = config.endpoint.clone().ok_or_else(|| LlmError::Config("remote LLM needs an endpoint".into()))?;
        if config.model.is_empty() {
            return Err(LlmError::Config("remote LLM needs a model name".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let audit = match &config.audit_log {
            Some(p) => Some(Mutex::new(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?))),
            None => None,
        };
        Ok(ChatClient {
            client,
            endpoint,
            api_key: std::env::var(&config.api_key_env).ok(),
            config: config.clone(),
            gate: Gate { free: Mutex::new(config.max_in_flight), cv: Condvar::new() },
            audit,
            counter: AtomicU64::new(0),
            backoff: Duration::from_millis(500),
            warned_prefix: std::sync::Once::new(),
        })
    }

    /// Overrides the base retry delay (doubles per attempt).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn body(&self, request: &CompletionRequest<'_>) -> Value {
        let mut content = request.prompt.text.clone();
        if !self.config.logprobs && self.config.rank_top > 0 {
            content.push('\n');
            content.push_str(&ranking_request(self.config.rank_top.min(request.prompt.candidates.len())));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        if self.config.logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(20);
        }
        body
    }

    fn post_once(&self, body: &Value) -> Result<Value, LlmError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout { attempts: 1 }
            } else {
                LlmError::Transport { attempts: 1, message: e.to_string() }
            }
        })?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(LlmError::Auth { status: status.as_u16() });
        }
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Err(LlmError::RateLimit { attempts: 1 });
        }
        if status.is_server_error() {
            return Err(LlmError::Server { status: status.as_u16(), attempts: 1, body: resp.text().unwrap_or_default() });
        }
        if !status.is_success() {
            return Err(LlmError::BadResponse(format!("HTTP {}: {}", status.as_u16(), resp.text().unwrap_or_default())));
        }
        resp.json::<Value>().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout { attempts: 1 }
            } else {
                LlmError::BadResponse(e.to_string())
            }
        })
    }

    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(body) {
                Err(e) if e.is_retryable() && attempt <= self.config.max_retries => {
                    log::warn!("chat request failed (attempt {attempt}): {e}");
                    thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err(LlmError::Timeout { .. }) => return Err(LlmError::Timeout { attempts: attempt }),
                Err(LlmError::RateLimit { .. }) => return Err(LlmError::RateLimit { attempts: attempt }),
                Err(LlmError::Server { status, body, .. }) => return Err(LlmError::Server { status, attempts: attempt, body }),
                Err(LlmError::Transport { message, .. }) => return Err(LlmError::Transport { attempts: attempt, message }),
                other => return other,
            }
        }
    }

    fn audit(&self, record: &Value) -> Result<(), LlmError> {
        if let Some(a) = &self.audit {
            let mut w = a.lock();
            serde_json::to_writer(&mut *w, record).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Response text and, when requested, per-letter log-probabilities.
type Extracted = (String, Option<Vec<(String, f64)>>);

fn extract(resp: &Value) -> Result<Extracted, LlmError> {
    let choice = resp
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::BadResponse("no choices in response".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadResponse("choice has no message content".into()))?
        .to_owned();
    let logprobs = choice.pointer("/logprobs/content/0/top_logprobs").and_then(Value::as_array).map(|alts| {
        alts.iter()
            .filter_map(|a| Some((a.get("token")?.as_str()?.to_owned(), a.get("logprob")?.as_f64()?)))
            .collect::<Vec<_>>()
    });
    Ok((text, logprobs))
}

impl LanguageModel for ChatClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let request_id = format!("{}-{n}", request.tag);
        let soft_prompt_ignored = request.soft_prompt.is_some() && !self.config.prefix_support;
        if soft_prompt_ignored {
            self.warned_prefix.call_once(|| {
                log::warn!("endpoint does not advertise prefix support; exported soft prompts are not sent");
            });
        }
        let body = self.body(request);
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let result = self.post(&body).and_then(|v| extract(&v));
        let latency = started.elapsed();
        let ts_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let mut record = json!({
            "request_id": request_id,
            "tag": request.tag,
            "ts_ms": ts_ms as u64,
            "latency_ms": latency.as_secs_f64() * 1e3,
            "request": body,
            "soft_prompt": request.soft_prompt.map(|p| p.display().to_string()),
            "soft_prompt_ignored": soft_prompt_ignored,
        });
        match &result {
            Ok((text, lp)) => {
                record["response"] = json!(text);
                record["letter_logprobs"] = json!(lp);
            }
            Err(e) => record["error"] = json!(e.to_string()),
        }
        self.audit(&record)?;
        let (text, letter_logprobs) = result?;
        Ok(Completion { request_id, text, latency, letter_logprobs, source: Source::Remote })
    }
}
