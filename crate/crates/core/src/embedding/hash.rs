use super::{EmbedError, Embedder, Embedding};
use crate::linalg::normalize;

/// Deterministic feature-hashing embedder.
///
/// Lower-cased word tokens and boundary-padded character trigrams are
/// hashed (seeded FNV-1a) into `dim` signed buckets. Strings sharing
/// vocabulary land close in cosine space, which is enough for retrieval
/// tests without a model runtime. The output is a pure function of
/// `(text, dim, seed, normalize)`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    normalize: bool,
}

const WORD_WEIGHT: f32 = 1.0;
const TRIGRAM_WEIGHT: f32 = 0.5;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64, normalize: bool) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashEmbedder { dim, seed, normalize }
    }

    fn hash(&self, kind: u8, bytes: &[u8]) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for &b in std::iter::once(&kind).chain(bytes) {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
        // final avalanche so low bits depend on every input byte
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
        h
    }

    fn add(&self, v: &mut [f32], kind: u8, bytes: &[u8], weight: f32) {
        let h = self.hash(kind, bytes);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign * weight;
    }

    fn embed_one(&self, text: &str) -> Embedding {
        let mut v = vec![0.0f32; self.dim];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut v, b'w', word.as_bytes(), WORD_WEIGHT);
            let padded: Vec<char> = std::iter::once('#').chain(word.chars()).chain(std::iter::once('#')).collect();
            let mut buf = [0u8; 12];
            for tri in padded.windows(3) {
                let mut len = 0;
                for c in tri {
                    len += c.encode_utf8(&mut buf[len..]).len();
                }
                self.add(&mut v, b't', &buf[..len], TRIGRAM_WEIGHT);
            }
        }
        if self.normalize {
            normalize(&mut v);
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, l2_norm};

    #[test]
    fn deterministic_and_distinct() {
        let e = HashEmbedder::new(8, 0, true);
        let a1 = e.embed_text("a").unwrap();
        let a2 = e.embed_text("a").unwrap();
        let b = e.embed_text("b").unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn normalized_output_has_unit_norm() {
        let e = HashEmbedder::new(64, 3, true);
        for t in ["Matrix", "The Matrix : sci-fi", "ü ñ 漢字"] {
            let n = l2_norm(&e.embed_text(t).unwrap());
            assert!((n - 1.0).abs() <= 1e-6, "{t}: {n}");
        }
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashEmbedder::new(16, 0, true);
        assert_eq!(e.embed_text("").unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn seed_changes_vector() {
        let a = HashEmbedder::new(32, 1, true).embed_text("film").unwrap();
        let b = HashEmbedder::new(32, 2, true).embed_text("film").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shared_words_are_closer() {
        let e = HashEmbedder::new(256, 0, true);
        let q = e.embed_text("space opera adventure").unwrap();
        let near = e.embed_text("an adventure in space").unwrap();
        let far = e.embed_text("cooking with garlic").unwrap();
        assert!(cosine(&q, &near) > cosine(&q, &far));
        assert!((cosine(&q, &q) - 1.0).abs() < 1e-9);
    }
}
