//! Text-to-vector encoders standing in for a sentence-embedding model.
//!
//! Three implementations share the [`Embedder`] trait: [`HashEmbedder`]
//! (deterministic, no model runtime), [`RemoteEmbedder`] (JSON over HTTP)
//! and [`CachedEmbedder`], which wraps either one with a persistent
//! append-only cache.

mod cache;
mod hash;
mod remote;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedEmbedder;
pub use hash::HashEmbedder;
pub use remote::RemoteEmbedder;

/// A dense f32 embedding.
pub type Embedding = Vec<f32>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("embedding config: {0}")]
    Config(String),
    #[error("malformed embedding response: {0}")]
    BadResponse(String),
    #[error("non-finite value in embedding of {0:?}")]
    NonFinite(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport { .. })
            || matches!(self, EmbedError::Http { status, .. } if *status == 429 || *status >= 500)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Order-preserving; element `i` must equal `embed_text(texts[i])`.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or_else(|| EmbedError::BadResponse("empty result".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed_batch(texts)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError> {
        (**self).embed_text(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderMode {
    Remote,
    #[default]
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub mode: EmbedderMode,
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token for `remote` mode.
    pub api_key_env: String,
    pub dim: usize,
    pub normalize: bool,
    pub cache: Option<PathBuf>,
    pub seed: u64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub batch_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            mode: EmbedderMode::DeterministicTest,
            endpoint: None,
            api_key_env: "KRAGREC_EMBED_API_KEY".into(),
            dim: 384,
            normalize: true,
            cache: None,
            seed: 0,
            timeout_secs: 30,
            max_retries: 3,
            batch_size: 64,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.mode == EmbedderMode::Remote && self.endpoint.is_none() {
            return Err(EmbedError::Config("remote mode needs an endpoint".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Instantiates the configured embedder, wrapped in a cache when a
    /// cache path is set.
    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        let inner: Arc<dyn Embedder> = match self.mode {
            EmbedderMode::DeterministicTest => Arc::new(HashEmbedder::new(self.dim, self.seed, self.normalize)),
            EmbedderMode::Remote => Arc::new(RemoteEmbedder::from_config(self)?),
        };
        match &self.cache {
            Some(path) => Ok(Arc::new(CachedEmbedder::open(inner, path)?)),
            None => Ok(inner),
        }
    }
}

pub(crate) fn check_finite(text: &str, v: &[f32]) -> Result<(), EmbedError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EmbedError::NonFinite(text.chars().take(40).collect()))
    }
}
