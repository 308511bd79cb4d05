//! Embedding vectors, similarity scores and the encoder contract.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("centroid of an empty set of vectors")]
    Empty,
    #[error("embedding must have at least one component")]
    ZeroDim,
    #[error("non-finite embedding component at index {0}")]
    NonFinite(usize),
}

/// A dense embedding with finite components.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("EmbeddingVector").field(&self.0).finish()
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::ZeroDim);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }

    fn check_dim(&self, other: &Self) -> Result<(), VectorError> {
        if self.dim() != other.dim() {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    /// Squared Euclidean distance.
    pub fn sq_dist(&self, other: &Self) -> Result<f64, VectorError> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VectorError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    a.check_dim(b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    let d = dot(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Component-wise mean, accumulated as a running mean so that identical
/// inputs reproduce the input exactly.
pub fn centroid<'a, I>(vectors: I) -> Result<EmbeddingVector, VectorError>
where
    I: IntoIterator<Item = &'a EmbeddingVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(VectorError::Empty)?;
    let mut acc = first.0.clone();
    let mut n = 1usize;
    for v in iter {
        first.check_dim(v)?;
        n += 1;
        let k = n as f64;
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += (x - *a) / k;
        }
    }
    Ok(EmbeddingVector(acc))
}

/// Which similarity thresholds are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    #[default]
    Dot,
    Cosine,
}

impl SimilarityMetric {
    pub fn score(self, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
        match self {
            Self::Dot => dot(a, b),
            Self::Cosine => cosine(a, b),
        }
    }
}

impl std::str::FromStr for SimilarityMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Self::Dot),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown metric `{other}` (expected dot or cosine)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned a malformed response: {0}")]
    Malformed(String),
    #[error("backend returned {actual} items for {expected} inputs")]
    CountMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("no scripted reply for prompt {0}")]
    NoScriptedReply(String),
    #[error("cache error: {0}")]
    Cache(String),
}

/// Turns text into embeddings. Implementations must be deterministic for a
/// fixed configuration.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the configuration; used as part of cache keys.
    fn fingerprint(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed_batch(texts)
    }
}

impl<E: Encoder + ?Sized> Encoder for std::sync::Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed_batch(texts)
    }
}

/// Embeds one text and checks the backend honoured the declared dimension.
pub fn embed(encoder: &dyn Encoder, text: &str) -> Result<EmbeddingVector, BackendError> {
    let mut out = embed_all(encoder, &[text])?;
    Ok(out.pop().expect("one vector per text"))
}

/// Embeds many texts with count and dimension checks.
pub fn embed_all(
    encoder: &dyn Encoder,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector>, BackendError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let out = encoder.embed_batch(texts)?;
    if out.len() != texts.len() {
        return Err(BackendError::CountMismatch {
            expected: texts.len(),
            actual: out.len(),
        });
    }
    for v in &out {
        if v.dim() != encoder.dim() {
            return Err(VectorError::DimensionMismatch {
                expected: encoder.dim(),
                actual: v.dim(),
            }
            .into());
        }
    }
    Ok(out)
}

pub const DEFAULT_MOCK_NORM: f64 = std::f64::consts::SQRT_2;

/// Offline bag-of-words encoder.
///
/// Each lowercase alphanumeric token maps to a pseudo-random Gaussian vector
/// seeded by `(seed, token)`. A text embeds as the count-weighted sum over its
/// token multiset, normalized to `norm`. Texts sharing tokens therefore get
/// large dot products, up to `norm²` for identical multisets.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    pub seed: u64,
    pub dim: usize,
    pub norm: f64,
}

impl MockEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            norm: DEFAULT_MOCK_NORM,
        }
    }

    pub fn with_norm(mut self, norm: f64) -> Self {
        self.norm = norm;
        self
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
        if counts.is_empty() {
            counts.insert(text.to_string(), 1);
        }
        let mut acc = vec![0.0; self.dim];
        for (tok, n) in &counts {
            for (a, x) in acc.iter_mut().zip(self.token_vector(tok)) {
                *a += *n as f64 * x;
            }
        }
        let len = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = if len > 0.0 { self.norm / len } else { 0.0 };
        EmbeddingVector(acc.into_iter().map(|v| v * k).collect())
    }
}

impl Encoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!(
            "mock:seed={}:dim={}:norm={:?}",
            self.seed, self.dim, self.norm
        )
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}
