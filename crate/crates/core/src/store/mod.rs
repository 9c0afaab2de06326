//! The knowledge vector database: subgraph vectors keyed by
//! [`SubgraphKey`], searchable by similarity.
//!
//! Readers query an immutable [`Snapshot`] obtained lock-free; writers
//! build a new snapshot and publish it atomically. Rows inside a snapshot
//! are kept in ascending key order, so every derived structure (including
//! the approximate index) is a pure function of the stored contents.
//!
//! Store file layout (after the framed JSON header
//! `{format, version, dim, metric, count, backend, hnsw}`):
//! `count × (center u32 LE, layer u32 LE)` then `count × dim` f32 LE.

mod hnsw;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hnsw::HnswParams;

use crate::framing::{self, FrameError};
use crate::indexing::{SubgraphKey, SubgraphRecord};
use crate::linalg::{dot_wide, l2_norm};
use hnsw::Hnsw;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: store has {expected}, got {found}")]
    Dim { expected: usize, found: usize },
    #[error("non-finite value in vector for {0}")]
    NonFinite(SubgraphKey),
    #[error("top-k needs k >= 1")]
    ZeroK,
    #[error("unsupported store file version {0}")]
    Version(u32),
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<FrameError> for StoreError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io(io) => StoreError::Io(io),
            other => StoreError::Corrupt(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Cosine,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Exact,
    Approximate,
}

/// Summary of an open store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreHandle {
    pub backend: Backend,
    pub dim: usize,
    pub count: usize,
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredKey {
    pub key: SubgraphKey,
    pub score: f32,
}

/// Immutable view of the store contents.
#[derive(Debug)]
pub struct Snapshot {
    dim: usize,
    metric: Metric,
    keys: Vec<SubgraphKey>,
    data: Vec<f32>,
    norms: Vec<f64>,
    ann: Option<Hnsw>,
}

impl Snapshot {
    fn build(dim: usize, metric: Metric, rows: BTreeMap<SubgraphKey, Vec<f32>>, ann: Option<HnswParams>) -> Self {
        let mut keys = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (k, v) in rows {
            keys.push(k);
            data.extend_from_slice(&v);
        }
        let norms = data.chunks_exact(dim).map(l2_norm).collect();
        let mut snap = Snapshot { dim, metric, keys, data, norms, ann: None };
        if let Some(params) = ann {
            let s = &snap;
            let graph = Hnsw::build(s.keys.len(), params, &|a, b| s.pair_score(a as usize, b as usize));
            snap.ann = Some(graph);
        }
        snap
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[SubgraphKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: &SubgraphKey) -> Option<&[f32]> {
        self.keys.binary_search(key).ok().map(|i| self.row(i))
    }

    fn pair_score(&self, a: usize, b: usize) -> f64 {
        let d = dot_wide(self.row(a), self.row(b));
        match self.metric {
            Metric::Dot => d,
            Metric::Cosine => {
                let n = self.norms[a] * self.norms[b];
                if n == 0.0 {
                    0.0
                } else {
                    d / n
                }
            }
        }
    }

    fn query_score(&self, query: &[f32], query_norm: f64, row: usize) -> f64 {
        let d = dot_wide(query, self.row(row));
        match self.metric {
            Metric::Dot => d,
            Metric::Cosine => {
                let n = query_norm * self.norms[row];
                if n == 0.0 {
                    0.0
                } else {
                    d / n
                }
            }
        }
    }

    fn rank(&self, mut scored: Vec<ScoredKey>, k: usize) -> Vec<ScoredKey> {
        let cmp = |a: &ScoredKey, b: &ScoredKey| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored
    }

    /// Exact top-`k` by full scan. Ties order by ascending key.
    pub fn topk_exact(&self, query: &[f32], k: usize, filter: Option<&dyn Fn(&SubgraphKey) -> bool>) -> Vec<ScoredKey> {
        let qn = l2_norm(query);
        let scored = (0..self.keys.len())
            .filter(|&i| filter.map_or(true, |f| f(&self.keys[i])))
            .map(|i| ScoredKey { key: self.keys[i], score: self.query_score(query, qn, i) as f32 })
            .collect();
        self.rank(scored, k)
    }

    fn topk_approx(&self, query: &[f32], k: usize, filter: Option<&dyn Fn(&SubgraphKey) -> bool>) -> Vec<ScoredKey> {
        let Some(ann) = &self.ann else {
            return self.topk_exact(query, k, filter);
        };
        let qn = l2_norm(query);
        let ef = if filter.is_some() { k * 8 } else { k };
        let scored = ann
            .search(ef, &|row| self.query_score(query, qn, row as usize))
            .into_iter()
            .map(|r| r as usize)
            .filter(|&i| filter.map_or(true, |f| f(&self.keys[i])))
            .map(|i| ScoredKey { key: self.keys[i], score: self.query_score(query, qn, i) as f32 })
            .collect();
        self.rank(scored, k)
    }
}

pub struct VectorStore {
    dim: usize,
    metric: Metric,
    backend: Backend,
    hnsw: HnswParams,
    current: ArcSwap<Snapshot>,
    write_lock: Mutex<()>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    dim: usize,
    metric: Metric,
    count: usize,
    backend: Backend,
    hnsw: HnswParams,
}

const MAGIC: &[u8; 8] = b"KRRSTOR1";
const FORMAT: &str = "kragrec-store";
const VERSION: u32 = 1;

impl VectorStore {
    pub fn new(dim: usize, metric: Metric, backend: Backend) -> Self {
        Self::with_hnsw(dim, metric, backend, HnswParams::default())
    }

    pub fn with_hnsw(dim: usize, metric: Metric, backend: Backend, hnsw: HnswParams) -> Self {
        assert!(dim > 0, "store dim must be positive");
        let ann = (backend == Backend::Approximate).then_some(hnsw);
        VectorStore {
            dim,
            metric,
            backend,
            hnsw,
            current: ArcSwap::from_pointee(Snapshot::build(dim, metric, BTreeMap::new(), ann)),
            write_lock: Mutex::new(()),
        }
    }

    pub fn handle(&self) -> StoreHandle {
        StoreHandle { backend: self.backend, dim: self.dim, count: self.len(), metric: self.metric }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.current.load().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The currently published contents.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.load_full()
    }

    pub fn vector(&self, key: &SubgraphKey) -> Option<Vec<f32>> {
        self.current.load().get(key).map(<[f32]>::to_vec)
    }

    /// Inserts or replaces records; returns the number of distinct keys
    /// afterwards. Validation happens before anything is published.
    pub fn upsert<I: IntoIterator<Item = SubgraphRecord>>(&self, records: I) -> Result<usize, StoreError> {
        let incoming: Vec<SubgraphRecord> = records.into_iter().collect();
        for r in &incoming {
            if r.vector.len() != self.dim {
                return Err(StoreError::Dim { expected: self.dim, found: r.vector.len() });
            }
            if r.vector.iter().any(|x| !x.is_finite()) {
                return Err(StoreError::NonFinite(r.key));
            }
        }
        let _guard = self.write_lock.lock();
        let old = self.current.load_full();
        if incoming.is_empty() {
            return Ok(old.len());
        }
        let mut rows: BTreeMap<SubgraphKey, Vec<f32>> =
            old.keys.iter().enumerate().map(|(i, k)| (*k, old.row(i).to_vec())).collect();
        for r in incoming {
            rows.insert(r.key, r.vector);
        }
        let ann = (self.backend == Backend::Approximate).then_some(self.hnsw);
        let snap = Snapshot::build(self.dim, self.metric, rows, ann);
        let n = snap.len();
        self.current.store(Arc::new(snap));
        Ok(n)
    }

    /// Best `k` records for `query`, filtered first, scores non-increasing,
    /// ties by ascending key. An empty store yields an empty list.
    pub fn topk(&self, query: &[f32], k: usize, filter: Option<&dyn Fn(&SubgraphKey) -> bool>) -> Result<Vec<ScoredKey>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(StoreError::Dim { expected: self.dim, found: query.len() });
        }
        let snap = self.current.load();
        Ok(match self.backend {
            Backend::Exact => snap.topk_exact(query, k, filter),
            Backend::Approximate => snap.topk_approx(query, k, filter),
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), StoreError> {
        let snap = self.current.load();
        let header = StoreHeader {
            format: FORMAT.into(),
            version: VERSION,
            dim: self.dim,
            metric: self.metric,
            count: snap.len(),
            backend: self.backend,
            hnsw: self.hnsw,
        };
        framing::write_header(w, MAGIC, &header)?;
        let mut keybuf = Vec::with_capacity(snap.len() * 8);
        for k in &snap.keys {
            keybuf.extend_from_slice(&k.center.to_le_bytes());
            keybuf.extend_from_slice(&k.layer.to_le_bytes());
        }
        w.write_all(&keybuf)?;
        framing::write_f32s(w, &snap.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, StoreError> {
        let header: StoreHeader = framing::read_header(r, MAGIC)?;
        if header.format != FORMAT {
            return Err(StoreError::Corrupt(format!("unexpected format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(StoreError::Version(header.version));
        }
        if header.dim == 0 {
            return Err(StoreError::Corrupt("zero dim".into()));
        }
        let mut keys = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let center = framing::read_u32(r)?;
            let layer = framing::read_u32(r)?;
            keys.push(SubgraphKey { center, layer });
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StoreError::Corrupt("keys are not strictly ascending".into()));
        }
        let data = framing::read_f32s(r, header.count * header.dim)?;
        framing::expect_eof(r)?;
        let store = VectorStore::with_hnsw(header.dim, header.metric, header.backend, header.hnsw);
        let records = keys
            .into_iter()
            .zip(data.chunks_exact(header.dim))
            .map(|(key, v)| SubgraphRecord { key, vector: v.to_vec() });
        store.upsert(records)?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        VectorStore::read_from(&mut BufReader::new(File::open(path)?))
    }
}
