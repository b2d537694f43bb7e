//! Text embedders used for soft matching.

use std::collections::HashMap;

use thiserror::Error;

use crate::util::fnv1a;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedder returned an invalid response: {0}")]
    InvalidResponse(String),
}

/// Maps texts to unit-norm vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed(texts)
    }
}

/// Feature hashing of character n-grams into a fixed number of buckets.
/// Deterministic, offline, and identical strings get identical vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub ngram: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 512, ngram: 3 }
    }
}

impl HashingEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim.max(1)];
        let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        let n = self.ngram.max(1);
        if text.trim().is_empty() || chars.len() < n {
            v[0] = 1.0;
            return v;
        }
        let mut buf = String::new();
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window);
            let bucket = (fnv1a(buf.as_bytes()) % v.len() as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Similarity lookup over a set of strings embedded in one batch.
/// Identical strings always have similarity exactly 1; everything else is
/// the cosine clamped to `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct SimilarityCache {
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl SimilarityCache {
    pub fn build<'a, E, I>(embedder: &E, texts: I) -> Result<Self, EmbedError>
    where
        E: Embedder + ?Sized,
        I: IntoIterator<Item = &'a str>,
    {
        let mut index = HashMap::new();
        let mut unique: Vec<String> = Vec::new();
        for t in texts {
            if !index.contains_key(t) {
                index.insert(t.to_string(), unique.len());
                unique.push(t.to_string());
            }
        }
        let vectors = if unique.is_empty() { Vec::new() } else { embedder.embed(&unique)? };
        if vectors.len() != unique.len() {
            return Err(EmbedError::InvalidResponse(format!(
                "expected {} vector(s), got {}",
                unique.len(),
                vectors.len()
            )));
        }
        Ok(Self { index, vectors })
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => cosine(&self.vectors[i], &self.vectors[j]).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }
}
