//! Cosine similarity and the two-channel score fusion used to rank shots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EmbeddedSample, Embedding, Modality};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm embedding")]
    ZeroNormVector,
    #[error("cannot pool an empty list of embeddings")]
    EmptyInput,
    #[error("{0} embedding channel missing for the requested modality")]
    MissingChannel(&'static str),
}

/// A similarity value in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Clamps into `[-1, 1]`; callers only pass finite values.
    pub fn new(value: f64) -> Self {
        debug_assert!(value.is_finite());
        SimilarityScore(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (|a| |b|)`. Symmetric bit-for-bit in its arguments.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<SimilarityScore, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let (a, b) = (a.values(), b.values());
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNormVector);
    }
    Ok(SimilarityScore::new(dot(a, b) / (na * nb)))
}

/// Element-wise mean of token-level embeddings.
pub fn mean_pool(tokens: &[Embedding]) -> Result<Embedding, SimilarityError> {
    let first = tokens.first().ok_or(SimilarityError::EmptyInput)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for t in tokens {
        if t.dim() != dim {
            return Err(SimilarityError::DimensionMismatch { left: dim, right: t.dim() });
        }
        for (slot, v) in acc.iter_mut().zip(t.values()) {
            *slot += v;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    // finite inputs keep the mean finite
    Ok(Embedding::new(acc).expect("mean of finite embeddings is finite"))
}

/// Score a candidate against the query. Multimodal averages the image and
/// text cosines; the single-modality modes pass their channel through.
pub fn fused_score(
    query: &EmbeddedSample,
    candidate: &EmbeddedSample,
    modality: Modality,
) -> Result<SimilarityScore, SimilarityError> {
    let image = || -> Result<SimilarityScore, SimilarityError> {
        match (&candidate.image, &query.image) {
            (Some(c), Some(q)) => cosine(c, q),
            _ => Err(SimilarityError::MissingChannel("image")),
        }
    };
    let text = || -> Result<SimilarityScore, SimilarityError> {
        match (&candidate.text, &query.text) {
            (Some(c), Some(q)) => cosine(c, q),
            _ => Err(SimilarityError::MissingChannel("text")),
        }
    };
    match modality {
        Modality::Image => image(),
        Modality::Text => text(),
        Modality::Multimodal => {
            let (g, t) = (image()?, text()?);
            Ok(SimilarityScore::new((g.value() + t.value()) / 2.0))
        }
    }
}
