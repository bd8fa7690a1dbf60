//! Embeddings, the positive/negative example store, and nearest-neighbour
//! retrieval over it.
//!
//! Retrieval is an exhaustive cosine scan. Ties on similarity resolve to the
//! lexicographically lowest image id so that results are reproducible.

mod cache;
mod provider;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{content_hash, CacheRecord, EmbeddingCache};
pub use provider::{
    ConstantEmbedder, CountingProvider, EmbeddingProvider, HashEmbedder, ProviderError, ThumbnailEmbedder,
};
pub use store::{build_store, BuildOptions, BuildReport, EmbeddingStore, StoredEmbedding, VisragHit};

use crate::domain::{DomainError, Label, Prediction};
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding has non-finite component")]
    NonFinite,
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("store is empty")]
    EmptyStore,
    #[error("k = {k} invalid for a store of {len} vectors")]
    InvalidK { k: usize, len: usize },
    #[error("entry `{0}` is not in the train split")]
    NotInTrain(String),
    #[error("provider unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("embedding failed for {} item(s): {}", failed.len(), failed.join(", "))]
    PartialFailure { failed: Vec<String> },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

/// A finite, non-zero embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(EmbeddingError::ZeroVector);
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

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity `(a·b) / (‖a‖‖b‖)`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(cosine_with_norms(a.values(), a.norm(), b.values(), b.norm()))
}

#[inline]
pub(crate) fn cosine_with_norms(a: &[f64], a_norm: f64, b: &[f64], b_norm: f64) -> f64 {
    (dot(a, b) / (a_norm * b_norm)).clamp(-1.0, 1.0)
}

/// Majority vote over the `k` most similar stored vectors.
///
/// `score` is the fraction of positive neighbours; an even split resolves to
/// the negative class.
pub fn knn_classify(store: &EmbeddingStore, query: &EmbeddingVector, k: usize) -> Result<Prediction, EmbeddingError> {
    let ranked = store.ranked(query)?;
    if k == 0 || k > ranked.len() {
        return Err(EmbeddingError::InvalidK { k, len: ranked.len() });
    }
    let positives = ranked[..k].iter().filter(|n| n.label.is_positive()).count();
    let score = positives as f64 / k as f64;
    let label = if 2 * positives > k { Label::Positive } else { Label::Negative };
    Ok(Prediction::from_score(label, score)?)
}

/// Zero-shot decision from precomputed image and label-text embeddings.
pub fn zeroshot_from_vectors(
    image: &EmbeddingVector,
    pos_text: &EmbeddingVector,
    neg_text: &EmbeddingVector,
) -> Result<Prediction, EmbeddingError> {
    let s_pos = cosine(image, pos_text)?;
    let s_neg = cosine(image, neg_text)?;
    let label = if s_pos > s_neg { Label::Positive } else { Label::Negative };
    // two-way softmax at temperature 1, written in the overflow-safe logistic form
    let score = 1.0 / (1.0 + (s_neg - s_pos).exp());
    Ok(Prediction::from_score(label, score)?)
}

/// Classifies by comparing the image embedding with the embeddings of two label texts.
pub fn zeroshot_classify(
    provider: &dyn EmbeddingProvider,
    image: &Raster,
    pos_text: &str,
    neg_text: &str,
) -> Result<Prediction, EmbeddingError> {
    let img = provider.embed_image(image)?;
    let p = provider.embed_text(pos_text)?;
    let n = provider.embed_text(neg_text)?;
    zeroshot_from_vectors(&img, &p, &n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&v(&[1., 2., 3.]), &v(&[1., 2., 3.])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1., 0.]), &v(&[0., 1.])).unwrap(), 0.0);
        // (1*2 + 2*1) / (sqrt5 * sqrt5)
        let a = [1.0f64, 2.0];
        let b = [2.0f64, 1.0];
        let oracle = (a[0] * b[0] + a[1] * b[1]) / ((a[0].powi(2) + a[1].powi(2)).sqrt() * (b[0].powi(2) + b[1].powi(2)).sqrt());
        let got = cosine(&v(&a), &v(&b)).unwrap();
        assert!((got - 0.8).abs() < 1e-12);
        assert!((got - oracle).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1., 0.]), &v(&[1., 0., 0.])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(EmbeddingVector::new(vec![0.0, 0.0]), Err(EmbeddingError::ZeroVector)));
        assert!(matches!(EmbeddingVector::new(vec![f64::NAN]), Err(EmbeddingError::NonFinite)));
    }

    #[test]
    fn zero_vector_rejected_on_deserialize() {
        assert!(serde_json::from_str::<EmbeddingVector>("[0.0, 0.0]").is_err());
        assert_eq!(serde_json::from_str::<EmbeddingVector>("[1.5]").unwrap(), v(&[1.5]));
    }

    #[test]
    fn zeroshot_tie_goes_negative() {
        let img = v(&[1.0, 1.0]);
        let p = zeroshot_from_vectors(&img, &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(p.label, Label::Negative);
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn zeroshot_softmax_value() {
        // image e1; texts chosen so that s+ = 0.3 and s- = 0.1 exactly
        let img = v(&[1.0, 0.0]);
        let pos = v(&[0.3, (1.0f64 - 0.09).sqrt()]);
        let neg = v(&[0.1, (1.0f64 - 0.01).sqrt()]);
        let p = zeroshot_from_vectors(&img, &pos, &neg).unwrap();
        let oracle = 0.3f64.exp() / (0.3f64.exp() + 0.1f64.exp());
        assert_eq!(p.label, Label::Positive);
        assert!((p.score - oracle).abs() < 1e-12);
        assert!((p.score - 0.5498).abs() < 1e-4);
    }
}
