//! Turns re-ranked subgraphs into LLM-side inputs: either a soft prompt
//! (graph encoder → concatenation → MLP projector → `N` tokens) or plain
//! text triples.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, Embedding};
use crate::framing::{self, FrameError};
use crate::gnn::{forward, GnnError, GnnWeights, LocalGraph};
use crate::indexing::SubgraphKey;
use crate::kg::{KnowledgeGraph, Subgraph, Triple};
use crate::linalg::{Activation, Matrix};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("subgraph has no nodes")]
    EmptySubgraph,
    #[error("{given} subgraphs exceed the {capacity}-token soft prompt")]
    TooManySubgraphs { given: usize, capacity: usize },
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("invalid projector config: {0}")]
    Config(String),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("file: {0}")]
    File(#[from] FrameError),
}

impl From<std::io::Error> for EncodeError {
    fn from(e: std::io::Error) -> Self {
        EncodeError::File(FrameError::Io(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    #[default]
    Mean,
    Center,
}

/// Encoding network plus its readout.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoder {
    pub weights: GnnWeights,
    pub readout: Readout,
}

impl GraphEncoder {
    pub fn new(weights: GnnWeights, readout: Readout) -> Self {
        GraphEncoder { weights, readout }
    }

    pub fn hidden(&self) -> usize {
        self.weights.config().hidden
    }

    /// Runs the network on `subgraph` alone, starting from the text
    /// embeddings of its nodes, and pools the final layer.
    /// `node_embeddings` and `relation_embeddings` are indexed by global id.
    pub fn encode_with(
        &self,
        subgraph: &Subgraph,
        node_embeddings: &[Embedding],
        relation_embeddings: &[Embedding],
    ) -> Result<Vec<f32>, EncodeError> {
        if subgraph.nodes.is_empty() {
            return Err(EncodeError::EmptySubgraph);
        }
        let inputs: Vec<Vec<f32>> = subgraph
            .nodes
            .iter()
            .map(|&n| {
                node_embeddings.get(n as usize).cloned().ok_or(EncodeError::Shape {
                    what: "node embedding table",
                    expected: n as usize + 1,
                    found: node_embeddings.len(),
                })
            })
            .collect::<Result<_, _>>()?;
        let graph = LocalGraph::from_subgraph(subgraph);
        let states = forward(&self.weights, &inputs, relation_embeddings, &graph)?;
        let last = states.last().expect("at least one layer");
        let h = self.hidden();
        Ok(match self.readout {
            Readout::Mean => {
                let mut acc = vec![0.0f64; h];
                for i in 0..last.len() {
                    for (a, v) in acc.iter_mut().zip(last.row(i)) {
                        *a += *v as f64;
                    }
                }
                let n = last.len() as f64;
                acc.into_iter().map(|a| (a / n) as f32).collect()
            }
            Readout::Center => {
                let c = subgraph.nodes.binary_search(&subgraph.center).map_err(|_| EncodeError::EmptySubgraph)?;
                last.row(c).to_vec()
            }
        })
    }

    /// As [`encode_with`](Self::encode_with), embedding the texts on demand.
    pub fn encode_subgraph(&self, kg: &KnowledgeGraph, subgraph: &Subgraph, embedder: &dyn Embedder) -> Result<Vec<f32>, EncodeError> {
        let dim = embedder.dim();
        let node_texts: Vec<&str> = subgraph
            .nodes
            .iter()
            .map(|&n| kg.entity(n).map_or("", |e| e.text.as_str()))
            .collect();
        let node_vecs = embedder.embed_batch(&node_texts)?;
        let mut nodes = vec![Vec::new(); kg.entity_count()];
        for (&n, v) in subgraph.nodes.iter().zip(node_vecs) {
            nodes[n as usize] = v;
        }
        let used: Vec<u32> = {
            let mut s: Vec<u32> = subgraph.edges.iter().map(|t| t.relation).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let rel_texts: Vec<&str> = used.iter().map(|&r| kg.relation(r).map_or("", |x| x.text.as_str())).collect();
        let rel_vecs = embedder.embed_batch(&rel_texts)?;
        let mut relations = vec![vec![0.0; dim]; kg.relations().len()];
        for (&r, v) in used.iter().zip(rel_vecs) {
            relations[r as usize] = v;
        }
        self.encode_with(subgraph, &nodes, &relations)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    /// Width of one LLM input token embedding.
    pub llm_dim: usize,
    /// Hidden width of the two-layer MLP.
    pub hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig { llm_dim: 4096, hidden: 2048, activation: Activation::Gelu, seed: 0 }
    }
}

/// MLP mapping `N` concatenated subgraph vectors to `N` LLM tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    n_tokens: usize,
    input_per_token: usize,
    llm_dim: usize,
    activation: Activation,
    seed: u64,
    layers: Vec<(Matrix, Vec<f32>)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectorHeader {
    format: String,
    version: u32,
    n_tokens: usize,
    input_per_token: usize,
    llm_dim: usize,
    activation: Activation,
    seed: u64,
    sizes: Vec<usize>,
}

const PROJ_MAGIC: &[u8; 8] = b"KRRMLPW1";
const PROJ_FORMAT: &str = "kragrec-projector";

impl Projector {
    /// Seeded two-layer MLP `N·hidden → cfg.hidden → N·llm_dim` with zero biases.
    pub fn seeded(n_tokens: usize, input_per_token: usize, cfg: &ProjectorConfig) -> Result<Self, EncodeError> {
        if n_tokens == 0 || input_per_token == 0 || cfg.llm_dim == 0 || cfg.hidden == 0 {
            return Err(EncodeError::Config("all projector sizes must be positive".into()));
        }
        let sizes = [n_tokens * input_per_token, cfg.hidden, n_tokens * cfg.llm_dim];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = sizes
            .windows(2)
            .map(|w| (Matrix::random(w[1], w[0], &mut rng), vec![0.0; w[1]]))
            .collect();
        Ok(Projector {
            n_tokens,
            input_per_token,
            llm_dim: cfg.llm_dim,
            activation: cfg.activation,
            seed: cfg.seed,
            layers,
        })
    }

    /// Arbitrary layer stack; consecutive shapes must chain.
    pub fn from_layers(
        n_tokens: usize,
        input_per_token: usize,
        llm_dim: usize,
        activation: Activation,
        layers: Vec<(Matrix, Vec<f32>)>,
    ) -> Result<Self, EncodeError> {
        let mut width = n_tokens * input_per_token;
        if layers.is_empty() {
            return Err(EncodeError::Config("projector needs at least one layer".into()));
        }
        for (m, b) in &layers {
            if m.cols() != width {
                return Err(EncodeError::Shape { what: "projector layer input", expected: width, found: m.cols() });
            }
            if b.len() != m.rows() {
                return Err(EncodeError::Shape { what: "projector bias", expected: m.rows(), found: b.len() });
            }
            width = m.rows();
        }
        if width != n_tokens * llm_dim {
            return Err(EncodeError::Shape { what: "projector output", expected: n_tokens * llm_dim, found: width });
        }
        Ok(Projector { n_tokens, input_per_token, llm_dim, activation, seed: 0, layers })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn llm_dim(&self) -> usize {
        self.llm_dim
    }

    pub fn input_width(&self) -> usize {
        self.n_tokens * self.input_per_token
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    /// Applies the MLP; the activation runs between layers, not after the last.
    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>, EncodeError> {
        if x.len() != self.input_width() {
            return Err(EncodeError::Shape { what: "projector input", expected: self.input_width(), found: x.len() });
        }
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, (m, b)) in self.layers.iter().enumerate() {
            let mut next = m.matvec(&cur);
            for (v, bi) in next.iter_mut().zip(b) {
                *v += bi;
            }
            if i != last {
                self.activation.apply(&mut next);
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EncodeError> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(|(m, _)| m.rows()));
        let header = ProjectorHeader {
            format: PROJ_FORMAT.into(),
            version: 1,
            n_tokens: self.n_tokens,
            input_per_token: self.input_per_token,
            llm_dim: self.llm_dim,
            activation: self.activation,
            seed: self.seed,
            sizes,
        };
        framing::write_header(w, PROJ_MAGIC, &header)?;
        for (m, b) in &self.layers {
            framing::write_f32s(w, m.as_slice())?;
            framing::write_f32s(w, b)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EncodeError> {
        let h: ProjectorHeader = framing::read_header(r, PROJ_MAGIC)?;
        if h.format != PROJ_FORMAT || h.version != 1 || h.sizes.len() < 2 {
            return Err(EncodeError::Config(format!("unsupported projector file {} v{}", h.format, h.version)));
        }
        let mut layers = Vec::new();
        for w in h.sizes.windows(2) {
            let m = Matrix::from_vec(w[1], w[0], framing::read_f32s(r, w[0] * w[1])?).expect("sized read");
            let b = framing::read_f32s(r, w[1])?;
            layers.push((m, b));
        }
        framing::expect_eof(r)?;
        let mut p = Projector::from_layers(h.n_tokens, h.input_per_token, h.llm_dim, h.activation, layers)?;
        p.seed = h.seed;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        Projector::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// `n_tokens` LLM-space vectors; tokens with `mask == false` are padding
/// and are all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt {
    pub n_tokens: usize,
    pub dim: usize,
    /// Row-major `n_tokens × dim`.
    pub tokens: Vec<f32>,
    pub mask: Vec<bool>,
    pub keys: Vec<SubgraphKey>,
    pub scores: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SoftPromptHeader {
    format: String,
    version: u32,
    n_tokens: usize,
    dim: usize,
    masks: Vec<bool>,
    keys: Vec<SubgraphKey>,
    scores: Vec<f32>,
}

const SOFT_MAGIC: &[u8; 8] = b"KRRSOFT1";
const SOFT_FORMAT: &str = "kragrec-soft-prompt";

impl SoftPrompt {
    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    /// Export layout: framed JSON header `{format, version, n_tokens, dim,
    /// masks, keys, scores}` followed by `n_tokens × dim` f32 LE, row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EncodeError> {
        let header = SoftPromptHeader {
            format: SOFT_FORMAT.into(),
            version: 1,
            n_tokens: self.n_tokens,
            dim: self.dim,
            masks: self.mask.clone(),
            keys: self.keys.clone(),
            scores: self.scores.clone(),
        };
        framing::write_header(w, SOFT_MAGIC, &header)?;
        framing::write_f32s(w, &self.tokens)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EncodeError> {
        let h: SoftPromptHeader = framing::read_header(r, SOFT_MAGIC)?;
        if h.format != SOFT_FORMAT || h.version != 1 {
            return Err(EncodeError::Config(format!("unsupported soft prompt file {} v{}", h.format, h.version)));
        }
        if h.masks.len() != h.n_tokens {
            return Err(EncodeError::Shape { what: "mask length", expected: h.n_tokens, found: h.masks.len() });
        }
        let tokens = framing::read_f32s(r, h.n_tokens * h.dim)?;
        framing::expect_eof(r)?;
        Ok(SoftPrompt { n_tokens: h.n_tokens, dim: h.dim, tokens, mask: h.masks, keys: h.keys, scores: h.scores })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        SoftPrompt::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Concatenates per-subgraph vectors (zero-filled past `encoded.len()`),
/// projects them, and splits the result into `N` tokens.
pub fn build_soft_prompt(
    encoded: &[(SubgraphKey, f32, Vec<f32>)],
    projector: &Projector,
) -> Result<SoftPrompt, EncodeError> {
    let n = projector.n_tokens;
    if encoded.len() > n {
        return Err(EncodeError::TooManySubgraphs { given: encoded.len(), capacity: n });
    }
    let width = projector.input_per_token;
    let mut concat = vec![0.0f32; n * width];
    for (i, (_, _, h)) in encoded.iter().enumerate() {
        if h.len() != width {
            return Err(EncodeError::Shape { what: "subgraph vector", expected: width, found: h.len() });
        }
        concat[i * width..(i + 1) * width].copy_from_slice(h);
    }
    let dim = projector.llm_dim;
    let mask: Vec<bool> = (0..n).map(|i| i < encoded.len()).collect();
    let mut tokens = if encoded.is_empty() { vec![0.0; n * dim] } else { projector.apply(&concat)? };
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            tokens[i * dim..(i + 1) * dim].fill(0.0);
        }
    }
    Ok(SoftPrompt {
        n_tokens: n,
        dim,
        tokens,
        mask,
        keys: encoded.iter().map(|e| e.0).collect(),
        scores: encoded.iter().map(|e| e.1).collect(),
    })
}

/// Marker line appended when the triple cap cuts the rendering short.
pub const TRUNCATION_MARKER: &str = "{...}";

/// Renders subgraph triples as `{head, relation, tail}` lines, subgraphs in
/// the given order and triples in ascending id order within each. A triple
/// shared by several subgraphs is rendered once, at its first occurrence.
/// At most `max_triples` lines are emitted; if more exist, the
/// [`TRUNCATION_MARKER`] line follows.
pub fn textualize_subgraphs<'s, I>(kg: &KnowledgeGraph, subgraphs: I, max_triples: usize) -> String
where
    I: IntoIterator<Item = &'s Subgraph>,
{
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut lines: Vec<String> = Vec::new();
    let mut truncated = false;
    for sg in subgraphs {
        for t in &sg.edges {
            if !seen.insert(*t) {
                continue;
            }
            if lines.len() == max_triples {
                truncated = true;
                break;
            }
            let head = kg.entity(t.head).map_or("", |e| e.text.as_str());
            let rel = kg.relation(t.relation).map_or("", |r| r.text.as_str());
            let tail = kg.entity(t.tail).map_or("", |e| e.text.as_str());
            lines.push(format!("{{{head}, {rel}, {tail}}}"));
        }
        if truncated {
            break;
        }
    }
    if truncated {
        lines.push(TRUNCATION_MARKER.to_owned());
    }
    lines.join("\n")
}

/// Splits rendered lines back into `(head, relation, tail)` text triples.
/// Lines that are not three comma-separated fields in braces are skipped.
pub fn parse_textualized(text: &str) -> Vec<(String, String, String)> {
    text.lines()
        .filter(|l| *l != TRUNCATION_MARKER)
        .filter_map(|l| {
            let inner = l.strip_prefix('{')?.strip_suffix('}')?;
            let parts: Vec<&str> = inner.split(", ").collect();
            (parts.len() == 3).then(|| (parts[0].to_owned(), parts[1].to_owned(), parts[2].to_owned()))
        })
        .collect()
}
