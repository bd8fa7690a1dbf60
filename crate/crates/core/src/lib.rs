//! Core of `visagent`: a retrieval-augmented, tool-using multimodal agent for
//! binary scientific image classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`raster`]: 8-bit image buffers and PNG/JPEG codecs.
//! - [`domain`]: labeled images, dataset manifests, predictions, and seeded
//!   train/test subsampling.
//! - [`embedding`]: embedding vectors, cosine similarity, the positive/negative
//!   example store, retrieval, k-NN and zero-shot baselines, and the on-disk
//!   embedding cache.
//! - [`probe`]: the frozen-embedding MLP classifier (baseline and prediction tool).
//! - [`tools`]: image-enhancement and map-navigation tools and the per-dataset
//!   tool registry.
//! - [`agent`]: prompt assembly, reply grammar, the bounded conversation loop,
//!   and transcripts.
//! - [`eval`]: metrics, experiment runner, tool-usage analytics and report tables.
//! - [`synthetic`]: procedural labeled datasets for offline runs and tests.
//!
//! Network-backed providers live in the `visagent-http` crate; everything here
//! runs offline and compiles for `wasm32-unknown-unknown`.

pub mod agent;
pub mod domain;
pub mod embedding;
pub mod eval;
pub mod probe;
pub mod raster;
pub mod synthetic;
pub mod tools;

pub use domain::{DatasetKind, DatasetManifest, Label, LabeledImage, Prediction};
pub use embedding::{EmbeddingProvider, EmbeddingStore, EmbeddingVector};
pub use raster::Raster;
