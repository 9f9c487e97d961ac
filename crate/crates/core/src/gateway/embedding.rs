use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EmbeddingProvider, TransportError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding is empty")]
    Empty,
    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { values, provider_id: provider_id.into() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.values.iter().map(|v| v * factor).collect(), self.provider_id.clone())
    }
}

/// `dot(a, b) / (|a| * |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

/// Offline embedder: counts of hashed character trigrams.
///
/// Text is lowercased and padded with one space on each side, so every
/// non-empty input produces at least one trigram.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
    provider_id: String,
}

impl HashedNgramEmbedder {
    pub const DEFAULT_DIM: usize = 512;
    pub const NGRAM: usize = 3;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, provider_id: format!("hashed-char-trigram-{dim}") }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.dim];
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        for window in padded.windows(Self::NGRAM) {
            let gram: String = window.iter().collect();
            counts[(fnv1a(gram.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        counts
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn is_local(&self) -> bool {
        true
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec(), "t").unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn cosine_basics() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbeddingError::DimensionMismatch(1, 2))
        );
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])), Err(EmbeddingError::ZeroVector));
    }

    #[test]
    fn vector_validation() {
        assert_eq!(EmbeddingVector::new(vec![], "p"), Err(EmbeddingError::Empty));
        assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN], "p"), Err(EmbeddingError::NonFinite(1)));
    }

    // Independent two-pass oracle: norms first, then the dot product of the
    // normalized vectors.
    fn two_pass(a: &[f64], b: &[f64]) -> f64 {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
    }

    #[test]
    fn cosine_matches_two_pass_oracle_on_fixed_8dim_pair() {
        let a = [0.81, -0.27, 0.44, 1.93, -0.05, 0.66, -1.48, 0.12];
        let b = [-0.33, 0.95, 0.18, 1.07, 0.71, -0.62, -0.29, 1.54];
        let got = cosine_similarity(&v(&a), &v(&b)).unwrap();
        assert!((got - two_pass(&a, &b)).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn cosine_matches_oracle_and_is_symmetric(
            a in prop::collection::vec(-10.0f64..10.0, 8),
            b in prop::collection::vec(-10.0f64..10.0, 8),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let (va, vb) = (v(&a), v(&b));
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-15);
            prop_assert!((ab - two_pass(&a, &b)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn fallback_embedder_orders_by_ngram_overlap() {
        let e = HashedNgramEmbedder::default();
        let emb = |t: &str| v(&e.embed_one(t));
        let weekly = emb("weekly issuance");
        let monthly = emb("monthly issuance");
        let eyes = emb("blue eyes");
        assert_eq!(weekly.dim(), 512);
        assert!((cosine_similarity(&weekly, &weekly).unwrap() - 1.0).abs() <= 1e-12);
        let near = cosine_similarity(&weekly, &monthly).unwrap();
        let far = cosine_similarity(&weekly, &eyes).unwrap();
        assert!(near > far, "{near} <= {far}");
    }

    // Brute-force trigram overlap computed without hashing: the ordering of
    // raw trigram-multiset cosines must agree with the hashed vectors here.
    #[test]
    fn explicit_trigram_overlap_agrees_with_hashed_ordering() {
        use std::collections::HashMap;
        fn grams(t: &str) -> HashMap<String, f64> {
            let chars: Vec<char> = format!(" {t} ").chars().collect();
            let mut m = HashMap::new();
            for w in chars.windows(3) {
                *m.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
            }
            m
        }
        fn cos(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
            let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).unwrap_or(&0.0)).sum();
            let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        }
        let (w, m, b) = (grams("weekly issuance"), grams("monthly issuance"), grams("blue eyes"));
        assert!(cos(&w, &m) > 0.5);
        assert!(cos(&w, &b) < 0.2);
    }
}
