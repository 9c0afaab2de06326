//! Knowledge-graph retrieval-augmented recommendation.

pub mod app;
pub mod config;
pub mod embedding;
pub mod encoder;
pub mod eval;
pub mod framing;
pub mod gnn;
pub mod indexing;
pub mod kg;
pub mod linalg;
pub mod llm;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod synth;
