//! Minimal JSON embedding client.
//!
//! Request: `POST {"texts": [...]}`; response: `{"vectors": [[...], ...], "dim": d}`.
//! The bearer token, if any, is read from the environment variable named in
//! the config.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{check_finite, EmbedError, Embedder, EmbedderConfig, Embedding};
use crate::linalg::normalize;

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    dim: usize,
    normalize: bool,
    max_retries: u32,
    batch_size: usize,
    backoff: Duration,
}

impl RemoteEmbedder {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("remote mode needs an endpoint".into()))?;
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(RemoteEmbedder {
            client,
            endpoint,
            api_key: std::env::var(&cfg.api_key_env).ok(),
            dim: cfg.dim,
            normalize: cfg.normalize,
            max_retries: cfg.max_retries,
            batch_size: cfg.batch_size.max(1),
            backoff: Duration::from_millis(200),
        })
    }

    /// Overrides the base retry delay (doubles per attempt).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn post_once(&self, texts: &[&str]) -> Result<EmbedResponse, EmbedError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbedError::Http { status: status.as_u16(), body });
        }
        resp.json::<EmbedResponse>()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))
    }

    fn post_with_retries(&self, texts: &[&str]) -> Result<EmbedResponse, EmbedError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(texts) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    log::warn!("embedding request failed (attempt {attempt}): {e}");
                    thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
                }
                Err(EmbedError::Transport { message, .. }) => {
                    return Err(EmbedError::Transport { attempts: attempt, message })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp = self.post_with_retries(chunk)?;
            if resp.dim != self.dim {
                return Err(EmbedError::Config(format!(
                    "service dim {} does not match configured dim {}",
                    resp.dim, self.dim
                )));
            }
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::BadResponse(format!(
                    "{} vectors for {} texts",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            for (text, mut v) in chunk.iter().zip(resp.vectors) {
                if v.len() != self.dim {
                    return Err(EmbedError::Config(format!("vector of length {} for dim {}", v.len(), self.dim)));
                }
                check_finite(text, &v)?;
                if self.normalize {
                    normalize(&mut v);
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}
