use std::collections::HashSet;
use std::sync::Arc;

use visagent_core::domain::{load_manifest, subsample_labeled, DatasetKind, DatasetManifest};
use visagent_core::embedding::{build_store, BuildOptions, EmbeddingCache, EmbeddingProvider, EmbeddingStore};
use visagent_core::eval::LmmBackend;
use visagent_core::probe::{train_mlp, TrainConfig};
use visagent_core::tools::{build_registry, TileProvider, ToolDeps, ToolRegistry};

use crate::config::{DatasetSetup, ServiceConfig};

/// The model-facing collaborators shared by every job.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub llm: Arc<dyn LmmBackend>,
    pub tiles: Option<Arc<dyn TileProvider>>,
}

impl Backends {
    /// Resolves the backend specs in `config`; URLs select network clients.
    pub fn resolve(config: &ServiceConfig) -> Result<Self, String> {
        let geo = config.datasets.iter().any(|d| d.kind.is_geospatial());
        Ok(Self {
            embedder: visagent_http::resolve::embedder(&config.embedder).map_err(|e| e.to_string())?,
            llm: visagent_http::resolve::llm(&config.llm).map_err(|e| e.to_string())?,
            tiles: if geo {
                Some(visagent_http::resolve::tiles(&config.tiles).map_err(|e| e.to_string())?)
            } else {
                None
            },
        })
    }
}

/// Retrieval store, probe-backed tools and example images for one dataset kind.
pub struct Engine {
    pub kind: DatasetKind,
    pub manifest: DatasetManifest,
    pub store: EmbeddingStore,
    pub registry: ToolRegistry,
    labeled_ids: HashSet<String>,
}

impl Engine {
    pub fn build(setup: &DatasetSetup, backends: &Backends, cache: Option<&EmbeddingCache>) -> Result<Self, String> {
        let manifest = load_manifest(&setup.manifest).map_err(|e| e.to_string())?;
        let labeled = subsample_labeled(&manifest, setup.labeled_fraction, setup.seed).map_err(|e| e.to_string())?;
        let (store, _) = build_store(&manifest, &labeled, backends.embedder.as_ref(), cache, &BuildOptions::default())
            .map_err(|e| e.to_string())?;
        let probe = train_mlp(
            &store.training_pairs(),
            &TrainConfig {
                seed: setup.seed,
                ..TrainConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let registry = build_registry(
            setup.kind,
            ToolDeps {
                probe: Some(Arc::new(probe)),
                embedder: Some(backends.embedder.clone()),
                tiles: backends.tiles.clone(),
            },
        )
        .map_err(|e| e.to_string())?;
        let labeled_ids = labeled.iter().map(|&i| manifest.entry(i).id.clone()).collect();
        Ok(Self {
            kind: setup.kind,
            manifest,
            store,
            registry,
            labeled_ids,
        })
    }

    /// Bytes and file name of a labeled example.
    pub fn example_bytes(&self, id: &str) -> Option<(Vec<u8>, String)> {
        if !self.labeled_ids.contains(id) {
            return None;
        }
        let (i, e) = self.manifest.find(id)?;
        let bytes = self.manifest.read_image_bytes(i).ok()?;
        Some((bytes, e.path.clone()))
    }
}
