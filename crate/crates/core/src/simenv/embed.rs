use std::collections::HashMap;

use crate::utility::{Embedder, EmbeddingVector};

use super::SimError;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Bucket index and sign of a token at dimension `dim`.
pub fn token_bucket(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a(token.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Signed feature hashing over a bag of tokens, L2-normalized. Text with no
/// tokens (or whose buckets cancel out) maps to the first basis vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

pub const DEFAULT_DIM: usize = 256;

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, SimError> {
        if dim < 16 {
            return Err(SimError::InvalidSpec(format!("embedding dim {dim} < 16")));
        }
        Ok(Self { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0; dim];
    for tok in tokenize(text) {
        let (b, s) = token_bucket(&tok, dim);
        values[b] += s;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        values[0] = 1.0;
    } else {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector { values }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        hash_embed(text, self.dim)
    }
}

/// Hash embedder with a read-only table of precomputed texts. Corpus node
/// texts are warmed once; anything else is embedded on the fly.
#[derive(Debug, Clone, Default)]
pub struct CachedEmbedder {
    inner: HashEmbedder,
    cache: HashMap<String, EmbeddingVector>,
}

impl CachedEmbedder {
    pub fn new(inner: HashEmbedder) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
        }
    }

    pub fn warm(&mut self, text: &str) {
        if !self.cache.contains_key(text) {
            let v = self.inner.embed(text);
            self.cache.insert(text.to_string(), v);
        }
    }
}

impl Embedder for CachedEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        match self.cache.get(text) {
            Some(v) => v.clone(),
            None => self.inner.embed(text),
        }
    }
}
