//! Popularity-gated subgraph retrieval and prompt-driven re-ranking.
//!
//! For each history item whose popularity percentile falls below `p`, the
//! item text is embedded, mapped into the index space with the indexing
//! network's input projection, and matched against the vector store. The
//! pooled results are re-ranked against the recommendation prompt and the
//! best `N` kept.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder};
use crate::gnn::{GnnError, GnnWeights};
use crate::indexing::SubgraphKey;
use crate::kg::{ego_subgraph, Item, ItemTable, KgError, KnowledgeGraph, Popularity, Subgraph};
use crate::linalg::{dot_wide, l2_norm};
use crate::store::{Metric, ScoredKey, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("item {0:?} has no title")]
    MissingTitle(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalPolicyConfig {
    /// Popularity percentile threshold; items strictly below are retrieved.
    pub p: f64,
    pub top_k: usize,
    pub top_n: usize,
    /// Layers eligible for retrieval; empty means all.
    pub layers: Vec<u32>,
}

impl Default for RetrievalPolicyConfig {
    fn default() -> Self {
        RetrievalPolicyConfig { p: 0.5, top_k: 3, top_n: 5, layers: Vec::new() }
    }
}

impl RetrievalPolicyConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(RetrievalError::Policy(format!("p = {} is outside [0, 1]", self.p)));
        }
        if self.top_k == 0 || self.top_n == 0 {
            return Err(RetrievalError::Policy("top_k and top_n must be at least 1".into()));
        }
        if self.layers.contains(&0) {
            return Err(RetrievalError::Policy("layer 0 does not exist".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user: String,
    /// Oldest first.
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSubgraph {
    pub key: SubgraphKey,
    pub score: f32,
    pub source_item: String,
    pub subgraph: Subgraph,
}

/// A re-ranked subgraph; `score` stays the retrieval score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSubgraph {
    #[serde(flatten)]
    pub retrieved: RetrievedSubgraph,
    pub rerank_score: f32,
}

/// Retrieve iff the item's popularity percentile is strictly below `p`.
/// Unknown items count as the coldest (percentile 0).
pub fn should_retrieve(percentile: Option<f64>, p: f64) -> bool {
    percentile.unwrap_or(0.0) < p
}

/// `title`, or `title : description` when a description exists.
pub fn build_item_query(item: &Item) -> Result<String, RetrievalError> {
    let title = item.title.trim();
    if title.is_empty() {
        return Err(RetrievalError::MissingTitle(item.item_id.clone()));
    }
    let desc = item.description.trim();
    Ok(if desc.is_empty() { title.to_owned() } else { format!("{title} : {desc}") })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub item: String,
    pub percentile: Option<f64>,
    pub retrieve: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRetrieval {
    pub item: String,
    pub results: Vec<ScoredKey>,
}

/// Everything `retrieve_for_history` decided, for tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRetrieval {
    pub decisions: Vec<PolicyDecision>,
    pub per_item: Vec<ItemRetrieval>,
    pub pooled: Vec<RetrievedSubgraph>,
}

impl HistoryRetrieval {
    /// Number of store queries issued.
    pub fn retrieval_calls(&self) -> usize {
        self.per_item.len()
    }
}

fn metric_score(metric: Metric, a: &[f32], b: &[f32]) -> f32 {
    let d = dot_wide(a, b);
    let s = match metric {
        Metric::Dot => d,
        Metric::Cosine => {
            let n = l2_norm(a) * l2_norm(b);
            if n == 0.0 {
                0.0
            } else {
                d / n
            }
        }
    };
    s as f32
}

/// Query side of retrieval. Borrows every shared structure; cheap to build
/// per request and safe to share across threads.
pub struct Retriever<'a> {
    pub kg: &'a KnowledgeGraph,
    pub items: &'a ItemTable,
    pub popularity: &'a Popularity,
    pub store: &'a VectorStore,
    pub embedder: &'a dyn Embedder,
    /// Supplies the text-embedding → index-space projection.
    pub index_weights: &'a GnnWeights,
    pub policy: &'a RetrievalPolicyConfig,
}

impl<'a> Retriever<'a> {
    /// Embeds `text` and maps it into the store's vector space.
    pub fn encode_query(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let e = self.embedder.embed_text(text)?;
        Ok(self.index_weights.project_input(&e)?)
    }

    pub fn percentile(&self, item_id: &str) -> Option<f64> {
        self.popularity.percentile(self.items, item_id)
    }

    fn layer_ok(&self, key: &SubgraphKey) -> bool {
        self.policy.layers.is_empty() || self.policy.layers.contains(&key.layer)
    }

    pub fn retrieve_for_item(&self, item: &Item) -> Result<(Vec<ScoredKey>, Vec<RetrievedSubgraph>), RetrievalError> {
        let q = self.encode_query(&build_item_query(item)?)?;
        let filter = |k: &SubgraphKey| self.layer_ok(k);
        let hits = if self.policy.layers.is_empty() {
            self.store.topk(&q, self.policy.top_k, None)?
        } else {
            self.store.topk(&q, self.policy.top_k, Some(&filter))?
        };
        if hits.is_empty() {
            log::warn!("vector store returned nothing for item {:?}", item.item_id);
        }
        let retrieved = hits
            .iter()
            .map(|h| {
                Ok(RetrievedSubgraph {
                    key: h.key,
                    score: h.score,
                    source_item: item.item_id.clone(),
                    subgraph: ego_subgraph(self.kg, h.key.center, h.key.layer)?,
                })
            })
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        Ok((hits, retrieved))
    }

    /// Applies the policy to every history item and pools the results,
    /// keeping the best score per key (earliest source item on ties).
    pub fn retrieve_for_history(&self, history: &UserHistory) -> Result<HistoryRetrieval, RetrievalError> {
        if history.items.is_empty() {
            return Err(RetrievalError::EmptyHistory);
        }
        let mut decisions = Vec::with_capacity(history.items.len());
        let mut per_item = Vec::new();
        let mut best: HashMap<SubgraphKey, RetrievedSubgraph> = HashMap::new();
        for item_id in &history.items {
            let percentile = self.percentile(item_id);
            let retrieve = should_retrieve(percentile, self.policy.p);
            decisions.push(PolicyDecision { item: item_id.clone(), percentile, retrieve });
            if !retrieve {
                continue;
            }
            let Some(item) = self.items.get(item_id) else {
                log::warn!("history item {item_id:?} is not in the catalogue; nothing to query with");
                continue;
            };
            let (hits, retrieved) = self.retrieve_for_item(item)?;
            per_item.push(ItemRetrieval { item: item_id.clone(), results: hits });
            for r in retrieved {
                match best.get(&r.key) {
                    Some(prev) if prev.score >= r.score => {}
                    _ => {
                        best.insert(r.key, r);
                    }
                }
            }
        }
        let mut pooled: Vec<RetrievedSubgraph> = best.into_values().collect();
        pooled.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
        Ok(HistoryRetrieval { decisions, per_item, pooled })
    }

    /// Orders `pooled` by similarity between `prompt` and each subgraph's
    /// stored vector and keeps the best `top_n`.
    pub fn rerank(&self, pooled: &[RetrievedSubgraph], prompt: &str) -> Result<Vec<RankedSubgraph>, RetrievalError> {
        if pooled.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.encode_query(prompt)?;
        rerank_with_vector(pooled, &p, self.store, self.policy.top_n)
    }
}

/// Re-ranking against an already-encoded prompt vector.
pub fn rerank_with_vector(
    pooled: &[RetrievedSubgraph],
    prompt_vector: &[f32],
    store: &VectorStore,
    top_n: usize,
) -> Result<Vec<RankedSubgraph>, RetrievalError> {
    if top_n == 0 {
        return Err(RetrievalError::Policy("top_n must be at least 1".into()));
    }
    if prompt_vector.len() != store.dim() {
        return Err(StoreError::Dim { expected: store.dim(), found: prompt_vector.len() }.into());
    }
    let snap = store.snapshot();
    let mut ranked: Vec<RankedSubgraph> = pooled
        .iter()
        .map(|r| {
            let v = snap.get(&r.key).unwrap_or_else(|| panic!("pooled key {} missing from store", r.key));
            RankedSubgraph { retrieved: r.clone(), rerank_score: metric_score(store.metric(), prompt_vector, v) }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.rerank_score
            .total_cmp(&a.rerank_score)
            .then_with(|| a.retrieved.key.cmp(&b.retrieved.key))
    });
    ranked.truncate(top_n);
    Ok(ranked)
}
