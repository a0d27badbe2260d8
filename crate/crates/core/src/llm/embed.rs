use serde::{Deserialize, Serialize};

use crate::error::LlmError;

use super::gateway::Embedder;

/// A finite, L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. Rejects zero, empty, or non-finite input.
    pub fn normalized(raw: Vec<f32>) -> Result<Self, LlmError> {
        if raw.is_empty() {
            return Err(LlmError::Malformed("empty embedding".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(LlmError::Malformed("embedding has non-finite values".into()));
        }
        let norm = raw.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LlmError::Malformed("embedding has zero norm".into()));
        }
        Ok(Self(raw.into_iter().map(|v| (f64::from(v) / norm) as f32).collect()))
    }

    /// Wraps values already known to be unit-norm (e.g. rows read back from disk).
    pub fn from_unit(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Dot product accumulated in f64, left to right.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>() as f32
}

/// Deterministic feature-hashing embedder: lowercase alphanumeric tokens are
/// hashed (FNV-1a) into buckets, counted, and normalized. Texts that share
/// words land near each other, which is enough for offline tests.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 512;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let mut counts = vec![0f32; self.dim];
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            // punctuation-only text still gets a stable vector
            counts[self.bucket(text.trim())] = 1.0;
        }
        for tok in &tokens {
            counts[self.bucket(tok)] += 1.0;
        }
        EmbeddingVector::normalized(counts)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("feature-hash-fnv1a-{}", self.dim)
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        texts
            .iter()
            .map(|t| self.embed_one(t).map(EmbeddingVector::into_inner))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
