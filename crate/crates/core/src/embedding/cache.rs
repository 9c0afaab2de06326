//! Persistent embedding cache.
//!
//! The file is a sequence of records, each
//! `sha256(text) [32 bytes] | dim u32 LE | dim × f32 LE`. Records are only
//! appended. A torn final record (from an interrupted write) is ignored on
//! open; records whose dim differs from the wrapped embedder are skipped.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};

use super::{EmbedError, Embedder, Embedding};

type Key = [u8; 32];

pub struct CachedEmbedder<E> {
    inner: E,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, Embedding>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

fn key_of(text: &str) -> Key {
    Sha256::digest(text.as_bytes()).into()
}

impl<E: Embedder> CachedEmbedder<E> {
    /// In-memory only.
    pub fn in_memory(inner: E) -> Self {
        CachedEmbedder { inner, path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Loads existing records from `path` (if present) and appends new ones.
    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref().to_path_buf();
        let entries = match File::open(&path) {
            Ok(f) => read_records(BufReader::new(f), inner.dim())?,
            Err(e) if e.kind() == ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(e.into()),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(CachedEmbedder {
            inner,
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

fn read_records<R: Read>(mut r: R, dim: usize) -> Result<HashMap<Key, Embedding>, EmbedError> {
    let mut map = HashMap::new();
    let mut torn = false;
    loop {
        let mut key = [0u8; 32];
        match read_full(&mut r, &mut key)? {
            0 => break,
            32 => {}
            _ => {
                torn = true;
                break;
            }
        }
        let mut d = [0u8; 4];
        if read_full(&mut r, &mut d)? != 4 {
            torn = true;
            break;
        }
        let d = u32::from_le_bytes(d) as usize;
        let mut buf = vec![0u8; d * 4];
        if read_full(&mut r, &mut buf)? != buf.len() {
            torn = true;
            break;
        }
        if d == dim {
            let v = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            map.insert(key, v);
        }
    }
    if torn {
        log::warn!("embedding cache ends with a partial record; ignoring it");
    }
    Ok(map)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let keys: Vec<Key> = texts.iter().map(|t| key_of(t)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let entries = self.entries.read();
            let mut seen = std::collections::HashSet::new();
            for (i, k) in keys.iter().enumerate() {
                if !entries.contains_key(k) && seen.insert(*k) {
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let miss_texts: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed_batch(&miss_texts)?;
            let mut entries = self.entries.write();
            let mut writer = self.writer.lock();
            for (&i, v) in missing.iter().zip(fresh) {
                if let Some(w) = writer.as_mut() {
                    w.write_all(&keys[i])?;
                    w.write_all(&(v.len() as u32).to_le_bytes())?;
                    for x in &v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                entries.insert(keys[i], v);
            }
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
        }
        let entries = self.entries.read();
        Ok(keys.iter().map(|k| entries[k].clone()).collect())
    }
}
