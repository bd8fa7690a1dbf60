use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::EmbeddingVector;
use crate::raster::Raster;

#[derive(Debug, Clone, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned an invalid response: {0}")]
    InvalidResponse(String),
    #[error("provider does not support {0}")]
    Unsupported(&'static str),
}

/// Maps images and texts into a shared embedding space.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; cache files are keyed by it.
    fn id(&self) -> String;

    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_text(text)
    }
    fn health(&self) -> Result<(), ProviderError> {
        (**self).health()
    }
}

fn unit_gaussian_from_seed(seed: [u8; 32], dim: usize) -> EmbeddingVector {
    let mut rng = ChaCha8Rng::from_seed(seed);
    loop {
        // Box–Muller; isotropic so the direction is uniform on the sphere
        let mut v = Vec::with_capacity(dim);
        while v.len() < dim {
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            v.push(r * (std::f64::consts::TAU * u2).cos());
            if v.len() < dim {
                v.push(r * (std::f64::consts::TAU * u2).sin());
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return EmbeddingVector::new(v.into_iter().map(|x| x / n).collect()).expect("unit vector");
        }
    }
}

/// Offline fixture: hashes the input (with a seed) into a unit vector.
/// Identical inputs map to identical vectors; distinct inputs are effectively random.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, seed }
    }

    fn seed_for(&self, tag: &[u8], payload: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag);
        h.update(payload);
        h.finalize().into()
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-d{}-s{}", self.dim, self.seed)
    }

    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        let mut payload = Vec::with_capacity(image.data().len() + 24);
        payload.extend_from_slice(&(image.width() as u64).to_le_bytes());
        payload.extend_from_slice(&(image.height() as u64).to_le_bytes());
        payload.extend_from_slice(&(image.channels() as u64).to_le_bytes());
        payload.extend_from_slice(image.data());
        Ok(unit_gaussian_from_seed(self.seed_for(b"image", &payload), self.dim))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(unit_gaussian_from_seed(self.seed_for(b"text", text.as_bytes()), self.dim))
    }
}

/// Offline fixture whose image embeddings reflect content: mean-centred colour
/// averages over a `grid`×`grid` partition, plus a constant bias component.
/// Texts hash to pseudo-random vectors of the same dimension.
#[derive(Debug, Clone)]
pub struct ThumbnailEmbedder {
    grid: usize,
}

impl ThumbnailEmbedder {
    pub fn new(grid: usize) -> Self {
        assert!(grid > 0, "grid must be positive");
        Self { grid }
    }

    pub fn dim(&self) -> usize {
        self.grid * self.grid * 3 + 1
    }
}

impl Default for ThumbnailEmbedder {
    fn default() -> Self {
        Self::new(4)
    }
}

impl EmbeddingProvider for ThumbnailEmbedder {
    fn id(&self) -> String {
        format!("thumbnail-g{}", self.grid)
    }

    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        let g = self.grid;
        let mut sums = vec![0.0f64; g * g * 3];
        let mut counts = vec![0usize; g * g];
        for y in 0..image.height() {
            let gy = y * g / image.height();
            for x in 0..image.width() {
                let gx = x * g / image.width();
                let cell = gy * g + gx;
                counts[cell] += 1;
                for c in 0..3 {
                    let ch = if image.channels() == 1 { 0 } else { c };
                    sums[cell * 3 + c] += image.get(x, y, ch) as f64;
                }
            }
        }
        let mut v: Vec<f64> = sums
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = counts[i / 3].max(1) as f64;
                s / n / 255.0 - 0.5
            })
            .collect();
        v.push(0.25);
        EmbeddingVector::new(v).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        HashEmbedder::new(self.dim(), 0).embed_text(text)
    }
}

/// Returns the same vector for every image; texts hash like [`HashEmbedder`].
#[derive(Debug, Clone)]
pub struct ConstantEmbedder {
    vector: EmbeddingVector,
}

impl ConstantEmbedder {
    pub fn new(vector: EmbeddingVector) -> Self {
        Self { vector }
    }
}

impl EmbeddingProvider for ConstantEmbedder {
    fn id(&self) -> String {
        format!("constant-d{}", self.vector.dim())
    }

    fn embed_image(&self, _image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        Ok(self.vector.clone())
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        HashEmbedder::new(self.vector.dim(), 0).embed_text(text)
    }
}

/// Wraps a provider and counts the calls made through it.
#[derive(Debug)]
pub struct CountingProvider<P> {
    inner: P,
    image_calls: AtomicUsize,
    text_calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            image_calls: AtomicUsize::new(0),
            text_calls: AtomicUsize::new(0),
        }
    }

    pub fn image_calls(&self) -> usize {
        self.image_calls.load(Ordering::SeqCst)
    }

    pub fn text_calls(&self) -> usize {
        self.text_calls.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        self.image_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_image(image)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.text_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_text(text)
    }

    fn health(&self) -> Result<(), ProviderError> {
        self.inner.health()
    }
}
