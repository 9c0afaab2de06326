//! Hop-field subgraph indexing: the state of node `o` after layer `l`
//! summarizes its `l`-hop ego network and is stored under key `(o, l)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, Embedding};
use crate::gnn::{forward, GnnError, GnnWeights, LocalGraph};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

/// Identifies one hop-field subgraph. Orders by `(center, layer)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgraphKey {
    pub center: EntityId,
    pub layer: u32,
}

impl SubgraphKey {
    pub fn new(center: EntityId, layer: u32) -> Self {
        SubgraphKey { center, layer }
    }
}

impl fmt::Display for SubgraphKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.center, self.layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphRecord {
    pub key: SubgraphKey,
    pub vector: Vec<f32>,
}

/// Text embeddings of every entity (by id) and relation (by id).
pub fn embed_kg_texts(kg: &KnowledgeGraph, embedder: &dyn Embedder) -> Result<(Vec<Embedding>, Vec<Embedding>), EmbedError> {
    let ent: Vec<&str> = kg.entities().iter().map(|e| e.text.as_str()).collect();
    let rel: Vec<&str> = kg.relations().iter().map(|r| r.text.as_str()).collect();
    Ok((embedder.embed_batch(&ent)?, embedder.embed_batch(&rel)?))
}

/// Runs the indexing network over the whole graph and emits `|N| · L`
/// records ordered by `(center, layer)`.
pub fn index_kg(kg: &KnowledgeGraph, embedder: &dyn Embedder, weights: &GnnWeights) -> Result<Vec<SubgraphRecord>, IndexError> {
    let (nodes, relations) = embed_kg_texts(kg, embedder)?;
    index_with_embeddings(kg, &nodes, &relations, weights)
}

pub fn index_with_embeddings(
    kg: &KnowledgeGraph,
    node_embeddings: &[Embedding],
    relation_embeddings: &[Embedding],
    weights: &GnnWeights,
) -> Result<Vec<SubgraphRecord>, IndexError> {
    let graph = LocalGraph::from_kg(kg);
    let layers = forward(weights, node_embeddings, relation_embeddings, &graph)?;
    let mut records = Vec::with_capacity(kg.entity_count() * layers.len());
    for node in 0..kg.entity_count() {
        for (l, states) in layers.iter().enumerate() {
            records.push(SubgraphRecord {
                key: SubgraphKey::new(node as EntityId, l as u32 + 1),
                vector: states.row(node).to_vec(),
            });
        }
    }
    Ok(records)
}
