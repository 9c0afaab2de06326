//! The assembled recommender: popularity-gated retrieval, re-ranking,
//! knowledge injection (text triples or soft prompt) and the LLM call.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, Embedding};
use crate::encoder::{build_soft_prompt, textualize_subgraphs, EncodeError, GraphEncoder, Projector};
use crate::eval::EvalInstance;
use crate::gnn::GnnWeights;
use crate::indexing::{embed_kg_texts, SubgraphKey};
use crate::kg::{ItemTable, KnowledgeGraph, Popularity};
use crate::llm::{
    build_prompt, interpret, ChoiceDistribution, CompletionRequest, LanguageModel, LlmConfig, LlmError, LlmMode,
};
use crate::retrieval::{HistoryRetrieval, RankedSubgraph, RetrievalError, RetrievalPolicyConfig, Retriever, UserHistory};
use crate::store::VectorStore;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("pipeline setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval: Duration,
    pub encoding: Duration,
    pub llm: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub prompt: String,
    pub response: String,
    /// `None` when the response could not be parsed.
    pub distribution: Option<ChoiceDistribution>,
    /// Store queries issued for this request.
    pub retrieval_calls: usize,
    pub history_positions: usize,
    /// Re-ranked subgraphs handed to the LLM side, best first.
    pub kept: Vec<SubgraphKey>,
    pub soft_prompt: Option<PathBuf>,
    pub timings: StageTimings,
}

pub trait Recommender: Sync {
    fn recommend(&self, instance: &EvalInstance) -> Result<Recommendation, PipelineError>;
}

/// Every artifact the pipeline reads. Shared read-only across requests.
pub struct KRagRec {
    pub kg: KnowledgeGraph,
    pub items: ItemTable,
    pub popularity: Popularity,
    pub store: VectorStore,
    pub embedder: Arc<dyn Embedder>,
    pub index_weights: GnnWeights,
    pub encoder: GraphEncoder,
    pub projector: Option<Projector>,
    pub policy: RetrievalPolicyConfig,
    pub llm: Arc<dyn LanguageModel>,
    pub llm_config: LlmConfig,
    /// Where soft prompts are written in soft-prompt mode.
    pub soft_prompt_dir: Option<PathBuf>,
    text_embeddings: OnceLock<(Vec<Embedding>, Vec<Embedding>)>,
    encoded: RwLock<HashMap<SubgraphKey, Arc<Vec<f32>>>>,
}

impl std::fmt::Debug for KRagRec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KRagRec")
            .field("entities", &self.kg.entity_count())
            .field("items", &self.items.len())
            .field("store", &self.store.len())
            .field("mode", &self.llm_config.mode)
            .finish()
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub struct KRagRecParts {
    pub kg: KnowledgeGraph,
    pub items: ItemTable,
    pub popularity: Popularity,
    pub store: VectorStore,
    pub embedder: Arc<dyn Embedder>,
    pub index_weights: GnnWeights,
    pub encoder: GraphEncoder,
    pub projector: Option<Projector>,
    pub policy: RetrievalPolicyConfig,
    pub llm: Arc<dyn LanguageModel>,
    pub llm_config: LlmConfig,
    pub soft_prompt_dir: Option<PathBuf>,
}

impl KRagRec {
    pub fn new(parts: KRagRecParts) -> Result<Self, PipelineError> {
        parts.policy.validate()?;
        parts.llm_config.validate()?;
        if parts.llm_config.mode == LlmMode::SoftPromptExport {
            let p = parts.projector.as_ref().ok_or_else(|| PipelineError::Setup("soft-prompt mode needs a projector".into()))?;
            if p.n_tokens() != parts.policy.top_n {
                return Err(PipelineError::Setup(format!(
                    "projector emits {} tokens but top_n is {}",
                    p.n_tokens(),
                    parts.policy.top_n
                )));
            }
        }
        if parts.index_weights.config().input_dim != parts.embedder.dim() {
            return Err(PipelineError::Setup(format!(
                "embedder dim {} does not match indexing input dim {}",
                parts.embedder.dim(),
                parts.index_weights.config().input_dim
            )));
        }
        Ok(KRagRec {
            kg: parts.kg,
            items: parts.items,
            popularity: parts.popularity,
            store: parts.store,
            embedder: parts.embedder,
            index_weights: parts.index_weights,
            encoder: parts.encoder,
            projector: parts.projector,
            policy: parts.policy,
            llm: parts.llm,
            llm_config: parts.llm_config,
            soft_prompt_dir: parts.soft_prompt_dir,
            text_embeddings: OnceLock::new(),
            encoded: RwLock::new(HashMap::new()),
        })
    }

    pub fn retriever(&self) -> Retriever<'_> {
        Retriever {
            kg: &self.kg,
            items: &self.items,
            popularity: &self.popularity,
            store: &self.store,
            embedder: self.embedder.as_ref(),
            index_weights: &self.index_weights,
            policy: &self.policy,
        }
    }

    /// Pooled retrieval for the instance history followed by re-ranking
    /// against `prompt`.
    pub fn retrieve(&self, user: &str, history: &[String], prompt: &str) -> Result<(HistoryRetrieval, Vec<RankedSubgraph>), PipelineError> {
        let r = self.retriever();
        let pooled = r.retrieve_for_history(&UserHistory { user: user.to_owned(), items: history.to_vec() })?;
        let ranked = r.rerank(&pooled.pooled, prompt)?;
        Ok((pooled, ranked))
    }

    fn text_embeddings(&self) -> Result<&(Vec<Embedding>, Vec<Embedding>), PipelineError> {
        if let Some(t) = self.text_embeddings.get() {
            return Ok(t);
        }
        let computed = embed_kg_texts(&self.kg, self.embedder.as_ref())?;
        Ok(self.text_embeddings.get_or_init(|| computed))
    }

    fn encode(&self, ranked: &RankedSubgraph) -> Result<Arc<Vec<f32>>, PipelineError> {
        let key = ranked.retrieved.key;
        if let Some(v) = self.encoded.read().get(&key) {
            return Ok(v.clone());
        }
        let (nodes, relations) = self.text_embeddings()?;
        let v = Arc::new(self.encoder.encode_with(&ranked.retrieved.subgraph, nodes, relations)?);
        self.encoded.write().insert(key, v.clone());
        Ok(v)
    }

    fn export_soft_prompt(&self, user: &str, ranked: &[RankedSubgraph]) -> Result<Option<PathBuf>, PipelineError> {
        let projector = self.projector.as_ref().expect("checked at construction");
        let encoded: Vec<(SubgraphKey, f32, Vec<f32>)> = ranked
            .iter()
            .map(|r| Ok((r.retrieved.key, r.rerank_score, self.encode(r)?.as_ref().clone())))
            .collect::<Result<_, PipelineError>>()?;
        let sp = build_soft_prompt(&encoded, projector)?;
        match &self.soft_prompt_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| PipelineError::Encode(e.into()))?;
                let path = dir.join(format!("{}.ksp", file_safe(user)));
                sp.save(&path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Runs the full pipeline for one user history and candidate list.
    pub fn recommend_titles(
        &self,
        user: &str,
        history_ids: &[String],
        history_titles: &[String],
        candidate_titles: &[String],
    ) -> Result<Recommendation, PipelineError> {
        let m = candidate_titles.len();
        let domain = self.llm_config.domain;
        let base = build_prompt(history_titles, candidate_titles, m, domain, None)?;
        let mut timings = StageTimings::default();
        let mut calls = 0;
        let mut ranked = Vec::new();
        if self.llm_config.mode != LlmMode::Text {
            let t = Instant::now();
            let (pooled, r) = self.retrieve(user, history_ids, &base.text)?;
            timings.retrieval = t.elapsed();
            calls = pooled.retrieval_calls();
            ranked = r;
        }
        let t = Instant::now();
        let mut knowledge = None;
        let mut soft_prompt = None;
        match self.llm_config.mode {
            LlmMode::Text => {}
            LlmMode::TextTriples => {
                let text = textualize_subgraphs(
                    &self.kg,
                    ranked.iter().map(|r| &r.retrieved.subgraph),
                    self.llm_config.max_knowledge_triples,
                );
                knowledge = (!text.is_empty()).then_some(text);
            }
            LlmMode::SoftPromptExport => soft_prompt = self.export_soft_prompt(user, &ranked)?,
        }
        timings.encoding = t.elapsed();
        let prompt = if knowledge.is_some() { build_prompt(history_titles, candidate_titles, m, domain, knowledge.as_deref())? } else { base };
        let t = Instant::now();
        let completion = self.llm.complete(&CompletionRequest { tag: user, prompt: &prompt, soft_prompt: soft_prompt.as_deref() })?;
        timings.llm = t.elapsed();
        let distribution = match interpret(&completion, candidate_titles) {
            Ok(d) => Some(d),
            Err(u) => {
                log::warn!("unparseable answer for {user}: {:?}", u.response.chars().take(80).collect::<String>());
                None
            }
        };
        Ok(Recommendation {
            prompt: prompt.text,
            response: completion.text,
            distribution,
            retrieval_calls: calls,
            history_positions: history_ids.len(),
            kept: ranked.iter().map(|r| r.retrieved.key).collect(),
            soft_prompt,
            timings,
        })
    }

    pub fn soft_prompt_path(&self, user: &str) -> Option<PathBuf> {
        self.soft_prompt_dir.as_deref().map(|d: &Path| d.join(format!("{}.ksp", file_safe(user))))
    }
}

impl Recommender for KRagRec {
    fn recommend(&self, instance: &EvalInstance) -> Result<Recommendation, PipelineError> {
        let ids: Vec<String> = instance.history.iter().map(|c| c.item_id.clone()).collect();
        let titles: Vec<String> = instance.history.iter().map(|c| c.title.clone()).collect();
        let cands: Vec<String> = instance.candidates.iter().map(|c| c.title.clone()).collect();
        self.recommend_titles(&instance.user, &ids, &titles, &cands)
    }
}
