//! Relational message-passing network used both for hop-field indexing and
//! for subgraph encoding.
//!
//! One layer computes, for every node `o` with incident edges `(m, e)`:
//!
//! ```text
//! msg(o, m, e) = W_nbr · z[m] + W_edge · r[e]
//! agg(o)       = mean or multi-head attention over msg(o, ·, ·)   (0 if no edges)
//! z'[o]        = norm(act(z[o] + agg(o)))
//! ```
//!
//! Attention scores for head `h` are `<(W_self·z[o])_h, msg_h> / sqrt(d_h)`
//! followed by a softmax over the node's edges. Edge vectors `r[e]` are the
//! raw text embeddings of relations and stay fixed across layers; reverse
//! edges reuse the forward relation vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framing::{self, FrameError};
use crate::kg::{KnowledgeGraph, RelationId, Subgraph};
use crate::linalg::{dot, layer_norm, Activation, Matrix};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("weight file: {0}")]
    File(#[from] FrameError),
}

impl From<std::io::Error> for GnnError {
    fn from(e: std::io::Error) -> Self {
        GnnError::File(FrameError::Io(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    #[default]
    Attention,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub layers: usize,
    /// Width of incoming text embeddings.
    pub input_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub layer_norm: bool,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 4,
            input_dim: 384,
            hidden: 1024,
            heads: 4,
            aggregator: Aggregator::Attention,
            activation: Activation::Relu,
            layer_norm: true,
            seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers == 0 || self.input_dim == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(GnnError::Config("layers, input_dim, hidden and heads must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(GnnError::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Attention query map, `hidden × hidden`.
    pub w_self: Matrix,
    /// Neighbor message map, `hidden × hidden`.
    pub w_nbr: Matrix,
    /// Relation message map, `hidden × input_dim`.
    pub w_edge: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnWeights {
    config: GnnConfig,
    /// `hidden × input_dim` projection of text embeddings into node states.
    input_proj: Matrix,
    layers: Vec<LayerWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightHeader {
    format: String,
    version: u32,
    #[serde(flatten)]
    config: GnnConfig,
}

const MAGIC: &[u8; 8] = b"KRRGNNW1";
const FORMAT: &str = "kragrec-gnn";

impl GnnWeights {
    /// Seeded Gaussian init. Message maps are scaled down so the residual
    /// path dominates at initialization.
    pub fn seeded(config: GnnConfig) -> Result<Self, GnnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, d) = (config.hidden, config.input_dim);
        let input_proj = Matrix::random(h, d, &mut rng);
        let layers = (0..config.layers)
            .map(|_| {
                let w_self = Matrix::random(h, h, &mut rng);
                let mut w_nbr = Matrix::random(h, h, &mut rng);
                let mut w_edge = Matrix::random(h, d, &mut rng);
                w_nbr.scale(0.5);
                w_edge.scale(0.5);
                LayerWeights { w_self, w_nbr, w_edge }
            })
            .collect();
        Ok(GnnWeights { config, input_proj, layers })
    }

    /// Every map set to the (rectangular) identity.
    pub fn identity(config: GnnConfig) -> Result<Self, GnnError> {
        config.validate()?;
        let (h, d) = (config.hidden, config.input_dim);
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                w_self: Matrix::identity(h, h),
                w_nbr: Matrix::identity(h, h),
                w_edge: Matrix::identity(h, d),
            })
            .collect();
        Ok(GnnWeights { input_proj: Matrix::identity(h, d), config, layers })
    }

    pub fn from_parts(config: GnnConfig, input_proj: Matrix, layers: Vec<LayerWeights>) -> Result<Self, GnnError> {
        config.validate()?;
        let (h, d) = (config.hidden, config.input_dim);
        let check = |what, m: &Matrix, rows: usize, cols: usize| {
            if m.rows() != rows {
                return Err(GnnError::Shape { what, expected: rows, found: m.rows() });
            }
            if m.cols() != cols {
                return Err(GnnError::Shape { what, expected: cols, found: m.cols() });
            }
            Ok(())
        };
        check("input projection", &input_proj, h, d)?;
        if layers.len() != config.layers {
            return Err(GnnError::Shape { what: "layer count", expected: config.layers, found: layers.len() });
        }
        for l in &layers {
            check("w_self", &l.w_self, h, h)?;
            check("w_nbr", &l.w_nbr, h, h)?;
            check("w_edge", &l.w_edge, h, d)?;
        }
        Ok(GnnWeights { config, input_proj, layers })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerWeights] {
        &mut self.layers
    }

    pub fn input_projection(&self) -> &Matrix {
        &self.input_proj
    }

    /// Maps a text embedding into the hidden state space.
    pub fn project_input(&self, x: &[f32]) -> Result<Vec<f32>, GnnError> {
        if x.len() != self.config.input_dim {
            return Err(GnnError::Shape { what: "input embedding", expected: self.config.input_dim, found: x.len() });
        }
        Ok(self.input_proj.matvec(x))
    }

    /// Writes the weight file: framed JSON header, then row-major f32 LE
    /// matrices in the order `input_proj`, then per layer `w_self`, `w_nbr`,
    /// `w_edge`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), GnnError> {
        let header = WeightHeader { format: FORMAT.into(), version: 1, config: self.config.clone() };
        framing::write_header(w, MAGIC, &header)?;
        framing::write_f32s(w, self.input_proj.as_slice())?;
        for l in &self.layers {
            framing::write_f32s(w, l.w_self.as_slice())?;
            framing::write_f32s(w, l.w_nbr.as_slice())?;
            framing::write_f32s(w, l.w_edge.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, GnnError> {
        let header: WeightHeader = framing::read_header(r, MAGIC)?;
        if header.format != FORMAT || header.version != 1 {
            return Err(GnnError::Config(format!("unsupported weight format {} v{}", header.format, header.version)));
        }
        let cfg = header.config;
        cfg.validate()?;
        let (h, d) = (cfg.hidden, cfg.input_dim);
        let mat = |r: &mut R, rows, cols| -> Result<Matrix, GnnError> {
            let data = framing::read_f32s(r, rows * cols)?;
            Ok(Matrix::from_vec(rows, cols, data).expect("length checked by read"))
        };
        let input_proj = mat(r, h, d)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerWeights { w_self: mat(r, h, h)?, w_nbr: mat(r, h, h)?, w_edge: mat(r, h, d)? });
        }
        framing::expect_eof(r)?;
        GnnWeights::from_parts(cfg, input_proj, layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GnnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GnnError> {
        GnnWeights::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Loads `path` if it exists, otherwise seeds from `config` and writes
    /// the result there. A loaded file must match `config`.
    pub fn load_or_seed(path: impl AsRef<Path>, config: &GnnConfig) -> Result<Self, GnnError> {
        let path = path.as_ref();
        if path.exists() {
            let w = GnnWeights::load(path)?;
            if w.config() != config {
                return Err(GnnError::Config(format!(
                    "weights at {} were built for {:?}, config asks for {:?}",
                    path.display(),
                    w.config(),
                    config
                )));
            }
            Ok(w)
        } else {
            let w = GnnWeights::seeded(config.clone())?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            w.save(path)?;
            Ok(w)
        }
    }
}

/// Adjacency over local node indices `0..n`, with global relation ids.
/// Each list is sorted by `(relation, neighbor)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGraph {
    adjacency: Vec<Vec<(RelationId, u32)>>,
}

impl LocalGraph {
    pub fn from_lists(mut adjacency: Vec<Vec<(RelationId, u32)>>) -> Self {
        for l in &mut adjacency {
            l.sort_unstable();
        }
        LocalGraph { adjacency }
    }

    /// Whole graph; local index == entity id.
    pub fn from_kg(kg: &KnowledgeGraph) -> Self {
        let adjacency = (0..kg.entity_count() as u32)
            .map(|id| kg.neighbors(id).iter().map(|i| (i.relation, i.neighbor)).collect())
            .collect();
        LocalGraph { adjacency }
    }

    /// Restricted to a subgraph; local index `i` is `subgraph.nodes[i]`.
    pub fn from_subgraph(sg: &Subgraph) -> Self {
        let local = |id| sg.nodes.binary_search(&id).expect("edge endpoint inside subgraph") as u32;
        let mut adjacency = vec![Vec::new(); sg.nodes.len()];
        for t in &sg.edges {
            let (h, tl) = (local(t.head), local(t.tail));
            adjacency[h as usize].push((t.relation, tl));
            if h != tl {
                adjacency[tl as usize].push((t.relation, h));
            }
        }
        LocalGraph::from_lists(adjacency)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edges_of(&self, node: usize) -> &[(RelationId, u32)] {
        &self.adjacency[node]
    }
}

/// Node states as one row-major `n × dim` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    dim: usize,
    data: Vec<f32>,
}

impl NodeStates {
    pub fn new(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "state buffer is not a whole number of rows");
        NodeStates { dim, data }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self, GnnError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(GnnError::Shape { what: "node state", expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(NodeStates { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

fn matvec_rows(m: &Matrix, states: &NodeStates) -> Vec<f32> {
    let rows = m.rows();
    let mut out = vec![0.0f32; states.len() * rows];
    out.par_chunks_mut(rows)
        .enumerate()
        .for_each(|(i, o)| m.matvec_into(states.row(i), o));
    out
}

/// One message-passing layer over `graph`.
///
/// `relation_vectors[r]` is the text embedding of relation `r`
/// (`input_dim` wide) for every relation id that appears in `graph`.
pub fn message_pass_layer(
    states: &NodeStates,
    relation_vectors: &[Vec<f32>],
    graph: &LocalGraph,
    layer: &LayerWeights,
    config: &GnnConfig,
) -> Result<NodeStates, GnnError> {
    let h = config.hidden;
    if states.dim() != h {
        return Err(GnnError::Shape { what: "node state", expected: h, found: states.dim() });
    }
    if states.len() != graph.node_count() {
        return Err(GnnError::Shape { what: "node count", expected: graph.node_count(), found: states.len() });
    }
    let mut used = vec![false; relation_vectors.len()];
    for node in 0..graph.node_count() {
        for &(r, _) in graph.edges_of(node) {
            let v = relation_vectors
                .get(r as usize)
                .ok_or(GnnError::Shape { what: "relation table", expected: r as usize + 1, found: relation_vectors.len() })?;
            if v.len() != config.input_dim {
                return Err(GnnError::Shape { what: "relation vector", expected: config.input_dim, found: v.len() });
            }
            used[r as usize] = true;
        }
    }
    let edge_proj: Vec<Option<Vec<f32>>> = relation_vectors
        .iter()
        .zip(&used)
        .map(|(v, &u)| u.then(|| layer.w_edge.matvec(v)))
        .collect();
    let nbr_proj = matvec_rows(&layer.w_nbr, states);
    let queries = match config.aggregator {
        Aggregator::Attention => Some(matvec_rows(&layer.w_self, states)),
        Aggregator::Mean => None,
    };
    let heads = config.heads;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut out = vec![0.0f32; states.len() * h];
    out.par_chunks_mut(h).enumerate().for_each(|(o, row)| {
        let edges = graph.edges_of(o);
        let mut agg = vec![0.0f32; h];
        if !edges.is_empty() {
            let msgs: Vec<Vec<f32>> = edges
                .iter()
                .map(|&(r, m)| {
                    let nb = &nbr_proj[m as usize * h..(m as usize + 1) * h];
                    let ep = edge_proj[r as usize].as_ref().expect("relation marked used");
                    nb.iter().zip(ep).map(|(a, b)| a + b).collect()
                })
                .collect();
            match &queries {
                None => {
                    for msg in &msgs {
                        for (a, v) in agg.iter_mut().zip(msg) {
                            *a += v;
                        }
                    }
                    let inv = 1.0 / msgs.len() as f32;
                    for a in &mut agg {
                        *a *= inv;
                    }
                }
                Some(q) => {
                    let q = &q[o * h..(o + 1) * h];
                    let mut weights = vec![0.0f64; msgs.len()];
                    for head in 0..heads {
                        let span = head * dh..(head + 1) * dh;
                        for (w, msg) in weights.iter_mut().zip(&msgs) {
                            *w = dot(&q[span.clone()], &msg[span.clone()]) as f64 * scale;
                        }
                        let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for w in weights.iter_mut() {
                            *w = (*w - max).exp();
                            total += *w;
                        }
                        for (w, msg) in weights.iter().zip(&msgs) {
                            let alpha = (w / total) as f32;
                            for (a, v) in agg[span.clone()].iter_mut().zip(&msg[span.clone()]) {
                                *a += alpha * v;
                            }
                        }
                    }
                }
            }
        }
        let z = states.row(o);
        for ((dst, zi), ai) in row.iter_mut().zip(z).zip(&agg) {
            *dst = zi + ai;
        }
        config.activation.apply(row);
        if config.layer_norm {
            layer_norm(row);
        }
    });
    Ok(NodeStates::new(h, out))
}

/// Projects node text embeddings and runs every layer. Returns the states
/// after each layer (`result[l - 1]` is layer `l`).
pub fn forward(
    weights: &GnnWeights,
    node_inputs: &[Vec<f32>],
    relation_vectors: &[Vec<f32>],
    graph: &LocalGraph,
) -> Result<Vec<NodeStates>, GnnError> {
    let cfg = weights.config();
    if node_inputs.len() != graph.node_count() {
        return Err(GnnError::Shape { what: "node inputs", expected: graph.node_count(), found: node_inputs.len() });
    }
    for x in node_inputs {
        if x.len() != cfg.input_dim {
            return Err(GnnError::Shape { what: "input embedding", expected: cfg.input_dim, found: x.len() });
        }
    }
    let h = cfg.hidden;
    let mut data = vec![0.0f32; node_inputs.len() * h];
    data.par_chunks_mut(h)
        .enumerate()
        .for_each(|(i, o)| weights.input_proj.matvec_into(&node_inputs[i], o));
    let mut state = NodeStates::new(h, data);
    let mut out = Vec::with_capacity(cfg.layers);
    for layer in &weights.layers {
        state = message_pass_layer(&state, relation_vectors, graph, layer, cfg)?;
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(hidden: usize, aggregator: Aggregator) -> GnnConfig {
        GnnConfig {
            layers: 1,
            input_dim: hidden,
            hidden,
            heads: 1,
            aggregator,
            activation: Activation::None,
            layer_norm: false,
            seed: 1,
        }
    }

    #[test]
    fn isolated_node_identity_layer_is_noop() {
        let c = cfg(4, Aggregator::Mean);
        let w = GnnWeights::identity(c.clone()).unwrap();
        let states = NodeStates::new(4, vec![0.5, -1.0, 2.0, 0.0]);
        let g = LocalGraph::from_lists(vec![vec![]]);
        let out = message_pass_layer(&states, &[], &g, &w.layers()[0], &c).unwrap();
        assert_eq!(out, states);
    }

    #[test]
    fn star_center_ignores_neighbor_multiplicity_under_mean() {
        let c = cfg(3, Aggregator::Mean);
        let w = GnnWeights::seeded(c.clone()).unwrap();
        let rel = vec![vec![0.1, 0.2, 0.3]];
        let run = |k: usize| {
            let mut rows = vec![vec![1.0, 0.0, -1.0]];
            let mut adj = vec![(1..=k as u32).map(|m| (0, m)).collect::<Vec<_>>()];
            for _ in 0..k {
                rows.push(vec![0.3, 0.7, 0.2]);
                adj.push(vec![(0, 0)]);
            }
            let s = NodeStates::from_rows(3, &rows).unwrap();
            let out = message_pass_layer(&s, &rel, &LocalGraph::from_lists(adj), &w.layers()[0], &c).unwrap();
            out.row(0).to_vec()
        };
        let (a, b) = (run(2), run(7));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn single_head_uniform_attention_equals_mean() {
        let mut c = cfg(8, Aggregator::Attention);
        c.activation = Activation::Relu;
        c.layer_norm = true;
        let mut w = GnnWeights::seeded(c.clone()).unwrap();
        w.layers_mut()[0].w_self = Matrix::zeros(8, 8);
        let rows: Vec<Vec<f32>> = (0..5).map(|i| (0..8).map(|j| ((i * 8 + j) as f32).sin()).collect()).collect();
        let s = NodeStates::from_rows(8, &rows).unwrap();
        let rel = vec![(0..8).map(|j| j as f32 * 0.1).collect::<Vec<_>>(); 2];
        let g = LocalGraph::from_lists(vec![vec![(0, 1), (1, 2)], vec![(0, 0)], vec![(1, 0), (0, 3)], vec![(0, 2)], vec![]]);
        let att = message_pass_layer(&s, &rel, &g, &w.layers()[0], &c).unwrap();
        let mut cm = c.clone();
        cm.aggregator = Aggregator::Mean;
        let mean = message_pass_layer(&s, &rel, &g, &w.layers()[0], &cm).unwrap();
        for (a, b) in att.as_slice().iter().zip(mean.as_slice()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let c = cfg(4, Aggregator::Mean);
        let w = GnnWeights::identity(c.clone()).unwrap();
        let s = NodeStates::new(3, vec![0.0; 3]);
        let g = LocalGraph::from_lists(vec![vec![]]);
        assert!(matches!(
            message_pass_layer(&s, &[], &g, &w.layers()[0], &c),
            Err(GnnError::Shape { what: "node state", .. })
        ));
        let bad = GnnConfig { hidden: 6, heads: 4, ..GnnConfig::default() };
        assert!(GnnWeights::seeded(bad).is_err());
    }

    #[test]
    fn weight_file_round_trip() {
        let c = GnnConfig { layers: 2, input_dim: 5, hidden: 8, heads: 2, seed: 9, ..GnnConfig::default() };
        let w = GnnWeights::seeded(c).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = GnnWeights::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let truncated = &buf[..buf.len() - 3];
        assert!(GnnWeights::read_from(&mut &truncated[..]).is_err());
    }

    #[test]
    fn seeded_is_deterministic() {
        let c = GnnConfig { layers: 1, input_dim: 4, hidden: 4, heads: 1, seed: 3, ..GnnConfig::default() };
        assert_eq!(GnnWeights::seeded(c.clone()).unwrap(), GnnWeights::seeded(c).unwrap());
    }
}
