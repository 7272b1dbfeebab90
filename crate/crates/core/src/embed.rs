//! Text embeddings and cosine-similarity ranking of examples against a query.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prompt::IclTask;

/// A finite, non-zero embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch { left: 0, right: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTask("embedding contains a non-finite value".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

pub trait EmbeddingProvider {
    fn name(&self) -> String;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn name(&self) -> String {
        (**self).name()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

pub const HASHED_TRIGRAM_DIM: usize = 512;

/// 32-bit FNV-1a.
pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= b as u32;
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Deterministic offline embedder: an L2-normalized histogram of character
/// trigrams hashed into 512 bins. Texts shorter than three characters count
/// as a single gram.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedTrigramEmbedder;

impl HashedTrigramEmbedder {
    pub fn bin(gram: &str) -> usize {
        fnv1a32(gram.as_bytes()) as usize % HASHED_TRIGRAM_DIM
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn name(&self) -> String {
        String::from("hashed-trigram-512")
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut bins = vec![0.0f64; HASHED_TRIGRAM_DIM];
        let starts: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        if starts.len() < 3 {
            bins[Self::bin(text)] += 1.0;
        } else {
            for w in 0..=starts.len() - 3 {
                let end = starts.get(w + 3).copied().unwrap_or(text.len());
                bins[Self::bin(&text[starts[w]..end])] += 1.0;
            }
        }
        let norm = libm::sqrt(bins.iter().map(|v| v * v).sum());
        for v in &mut bins {
            *v /= norm;
        }
        EmbeddingVector::new(bins)
    }
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Indices sorted by descending similarity, ascending index on ties.
pub fn rank_by_similarity(similarities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarities.len()).collect();
    order.sort_by(|&a, &b| {
        similarities[b]
            .partial_cmp(&similarities[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Cosine similarity of every example input to the query.
pub fn example_similarities<P: EmbeddingProvider + ?Sized>(task: &IclTask, provider: &P) -> Result<Vec<f64>> {
    let query = provider.embed(&task.query)?;
    task.examples
        .iter()
        .map(|e| cosine(&provider.embed(&e.input)?, &query))
        .collect()
}

/// Example indices from most to least similar to the query.
pub fn rank_examples<P: EmbeddingProvider + ?Sized>(task: &IclTask, provider: &P) -> Result<Vec<usize>> {
    if task.examples.is_empty() {
        return Err(Error::InvalidTask("example pool is empty".into()));
    }
    Ok(rank_by_similarity(&example_similarities(task, provider)?))
}
