//! Run configuration: one TOML file, relative paths resolved against the
//! file's directory, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbedderConfig;
use crate::encoder::{ProjectorConfig, Readout};
use crate::eval::{derive_seed, EvalConfig};
use crate::gnn::{Aggregator, GnnConfig};
use crate::linalg::Activation;
use crate::llm::LlmConfig;
use crate::retrieval::RetrievalPolicyConfig;
use crate::store::{Backend, HnswParams, Metric};
use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Dataset and artifact directories. The dataset directory holds
/// `triples.tsv`, `entities.jsonl`, `relations.jsonl`, `items.jsonl` and
/// `interactions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub artifacts: PathBuf,
}

impl Paths {
    pub fn triples(&self) -> PathBuf {
        self.data.join("triples.tsv")
    }
    pub fn entities(&self) -> PathBuf {
        self.data.join("entities.jsonl")
    }
    pub fn relations(&self) -> PathBuf {
        self.data.join("relations.jsonl")
    }
    pub fn items(&self) -> PathBuf {
        self.data.join("items.jsonl")
    }
    pub fn interactions(&self) -> PathBuf {
        self.data.join("interactions.jsonl")
    }
    pub fn index_weights(&self) -> PathBuf {
        self.artifacts.join("index_gnn.bin")
    }
    pub fn encoder_weights(&self) -> PathBuf {
        self.artifacts.join("encoder_gnn.bin")
    }
    pub fn projector_weights(&self) -> PathBuf {
        self.artifacts.join("projector.bin")
    }
    pub fn store(&self) -> PathBuf {
        self.artifacts.join("store.bin")
    }
    pub fn soft_prompts(&self) -> PathBuf {
        self.artifacts.join("soft_prompts")
    }
}

/// GNN shape; the input width comes from the embedder and the seed from
/// the run seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let g = GnnConfig::default();
        NetworkConfig {
            layers: g.layers,
            hidden: g.hidden,
            heads: g.heads,
            aggregator: g.aggregator,
            activation: g.activation,
            layer_norm: g.layer_norm,
        }
    }
}

impl NetworkConfig {
    pub fn gnn(&self, input_dim: usize, seed: u64) -> GnnConfig {
        GnnConfig {
            layers: self.layers,
            input_dim,
            hidden: self.hidden,
            heads: self.heads,
            aggregator: self.aggregator,
            activation: self.activation,
            layer_norm: self.layer_norm,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub layer_norm: bool,
    pub readout: Readout,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        EncoderSection {
            layers: n.layers,
            hidden: n.hidden,
            heads: n.heads,
            aggregator: n.aggregator,
            activation: n.activation,
            layer_norm: n.layer_norm,
            readout: Readout::default(),
        }
    }
}

impl EncoderSection {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            aggregator: self.aggregator,
            activation: self.activation,
            layer_norm: self.layer_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorSection {
    pub llm_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for ProjectorSection {
    fn default() -> Self {
        let p = ProjectorConfig::default();
        ProjectorSection { llm_dim: p.llm_dim, hidden: p.hidden, activation: p.activation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub metric: Metric,
    pub backend: Backend,
    pub hnsw: HnswParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KgSection {
    /// Keep only entities within this many hops of a catalogue item.
    pub item_radius: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed; every random choice derives from it.
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub kg: KgSection,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub index: NetworkConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub projector: ProjectorSection,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub retrieval: RetrievalPolicyConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })?;
        let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        resolve(&base, &mut cfg.paths.data);
        resolve(&base, &mut cfg.paths.artifacts);
        if let Some(c) = cfg.embedder.cache.as_mut() {
            resolve(&base, c);
        }
        if let Some(a) = cfg.llm.audit_log.as_mut() {
            resolve(&base, a);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        RunConfig::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.embedder.validate().map_err(|e| inv(&e))?;
        self.index_gnn().validate().map_err(|e| inv(&e))?;
        self.encoder_gnn().validate().map_err(|e| inv(&e))?;
        if self.projector.llm_dim == 0 || self.projector.hidden == 0 {
            return Err(ConfigError::Invalid("projector sizes must be positive".into()));
        }
        self.retrieval.validate().map_err(|e| inv(&e))?;
        if self.retrieval.layers.iter().any(|&l| l as usize > self.index.layers) {
            return Err(ConfigError::Invalid(format!("retrieval.layers names a layer beyond index.layers = {}", self.index.layers)));
        }
        self.llm.validate().map_err(|e| inv(&e))?;
        self.eval.validate().map_err(|e| inv(&e))?;
        self.synth_config().validate().map_err(|e| inv(&e))?;
        Ok(())
    }

    pub fn index_gnn(&self) -> GnnConfig {
        self.index.gnn(self.embedder.dim, derive_seed(self.seed, "index"))
    }

    pub fn encoder_gnn(&self) -> GnnConfig {
        self.encoder.network().gnn(self.embedder.dim, derive_seed(self.seed, "encoder"))
    }

    pub fn projector_config(&self) -> ProjectorConfig {
        ProjectorConfig {
            llm_dim: self.projector.llm_dim,
            hidden: self.projector.hidden,
            activation: self.projector.activation,
            seed: derive_seed(self.seed, "projector"),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, ..self.synth.clone() }
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, "eval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "[paths]\ndata = \"data\"\nartifacts = \"out\"\n";

    #[test]
    fn defaults_follow_published_settings() {
        let c = RunConfig::from_toml(MIN, Path::new("/tmp/run/config.toml")).unwrap();
        assert_eq!(c.retrieval, RetrievalPolicyConfig { p: 0.5, top_k: 3, top_n: 5, layers: vec![] });
        assert_eq!(c.eval.m, 20);
        assert_eq!((c.index.layers, c.index.hidden), (4, 1024));
        assert_eq!((c.encoder.layers, c.encoder.hidden, c.encoder.heads), (4, 1024, 4));
        assert_eq!(c.paths.data, Path::new("/tmp/run/data"));
    }

    #[test]
    fn missing_key_is_named() {
        let err = RunConfig::from_toml("[paths]\ndata = \"d\"\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("artifacts"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml(&format!("{MIN}[retrieval]\ntop_q = 3\n"), Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("top_q"), "{err}");
    }

    #[test]
    fn layer_beyond_depth_rejected() {
        let text = format!("{MIN}[retrieval]\nlayers = [5]\n");
        assert!(RunConfig::from_toml(&text, Path::new("c.toml")).is_err());
    }
}
