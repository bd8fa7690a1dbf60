#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use visagent_core::agent::RunMeta;
use visagent_core::domain::{DatasetKind, Label, LabeledImage};
use visagent_core::embedding::{EmbeddingProvider, EmbeddingStore, ThumbnailEmbedder};
use visagent_core::probe::{train_mlp, TrainConfig};
use visagent_core::raster::Raster;
use visagent_core::synthetic::render_item;
use visagent_core::tools::{build_registry, FixtureTileProvider, ToolDeps, ToolRegistry};

pub const IMG: usize = 32;

/// Six labeled examples, a positive test image and a full tool registry.
pub struct Fixture {
    pub kind: DatasetKind,
    pub test: LabeledImage,
    pub store: EmbeddingStore,
    pub examples: HashMap<String, Raster>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub registry: ToolRegistry,
}

pub fn fixture(kind: DatasetKind) -> Fixture {
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(ThumbnailEmbedder::new(4));
    let mut examples = HashMap::new();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..6u64 {
        let positive = i % 2 == 0;
        let (img, _) = render_item(kind, positive, IMG, i, 0);
        let id = format!("ex{i}");
        let e = (id.clone(), embedder.embed_image(&img).unwrap());
        if positive {
            pos.push(e)
        } else {
            neg.push(e)
        }
        examples.insert(id, img);
    }
    let store = EmbeddingStore::new(pos, neg).unwrap();
    let probe = train_mlp(&store.training_pairs(), &TrainConfig::default()).unwrap();
    let registry = build_registry(
        kind,
        ToolDeps {
            probe: Some(Arc::new(probe)),
            embedder: Some(embedder.clone()),
            tiles: Some(Arc::new(FixtureTileProvider::new(0))),
        },
    )
    .unwrap();
    let (pixels, geo) = render_item(kind, true, IMG, 100, 0);
    Fixture {
        kind,
        test: LabeledImage {
            id: "test-0".into(),
            pixels,
            label: Label::Positive,
            geo,
            source_path: "test-0.png".into(),
        },
        store,
        examples,
        embedder,
        registry,
    }
}

pub fn meta(id: &str) -> RunMeta {
    RunMeta {
        conversation_id: id.to_string(),
        created_at: "2026-01-01T00:00:00Z".into(),
    }
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a frozen file; `UPDATE_GOLDEN=1` rewrites it.
pub fn assert_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {}; run with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}
