use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agent::{LmmClient, PolicyClient, ScriptedClient};
use crate::embedding::{EmbeddingProvider, HashEmbedder, ThumbnailEmbedder};
use crate::tools::{FixtureTileProvider, TileProvider};

/// Hands out a language-model client per test item.
pub trait LmmBackend: Send + Sync {
    fn client_for(&self, item_id: &str) -> Arc<dyn LmmClient>;
}

/// Every item talks to the same client.
pub struct SharedClient(pub Arc<dyn LmmClient>);

impl LmmBackend for SharedClient {
    fn client_for(&self, _item_id: &str) -> Arc<dyn LmmClient> {
        self.0.clone()
    }
}

/// Fixed replies per test item, replayed by a fresh [`ScriptedClient`] for
/// each conversation. Items without their own script use `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptBook {
    #[serde(default)]
    pub scripts: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub default: Vec<String>,
    #[serde(default = "default_fallback")]
    pub fallback: String,
}

fn default_fallback() -> String {
    ScriptedClient::DEFAULT_FALLBACK.to_string()
}

impl LmmBackend for ScriptBook {
    fn client_for(&self, item_id: &str) -> Arc<dyn LmmClient> {
        let script = self.scripts.get(item_id).unwrap_or(&self.default);
        Arc::new(ScriptedClient::with_fallback(script.clone(), self.fallback.clone()))
    }
}

fn parse_num<T: std::str::FromStr>(spec: &str, part: Option<&str>, default: T) -> Result<T, EvalError> {
    match part {
        None => Ok(default),
        Some(p) => p.parse().map_err(|_| EvalError::UnknownBackend(spec.to_string())),
    }
}

/// `hash:<dim>[:<seed>]` or `thumbnail[:<grid>]`.
pub fn fixture_embedder(spec: &str) -> Result<Arc<dyn EmbeddingProvider>, EvalError> {
    let mut parts = spec.split(':');
    match parts.next() {
        Some("hash") => {
            let dim: usize = parse_num(spec, parts.next(), 64)?;
            let seed: u64 = parse_num(spec, parts.next(), 0)?;
            if dim == 0 {
                return Err(EvalError::UnknownBackend(spec.to_string()));
            }
            Ok(Arc::new(HashEmbedder::new(dim, seed)))
        }
        Some("thumbnail") => {
            let grid: usize = parse_num(spec, parts.next(), 4)?;
            if grid == 0 {
                return Err(EvalError::UnknownBackend(spec.to_string()));
            }
            Ok(Arc::new(ThumbnailEmbedder::new(grid)))
        }
        _ => Err(EvalError::UnknownBackend(spec.to_string())),
    }
}

/// `policy[:<tools>[:<delay ms>]]` or `scripted:<script book file>`.
pub fn fixture_llm(spec: &str) -> Result<Arc<dyn LmmBackend>, EvalError> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path.as_ref(), e))?;
        let book: ScriptBook = serde_json::from_str(&text).map_err(|e| super::io_err(path.as_ref(), e))?;
        return Ok(Arc::new(book));
    }
    let mut parts = spec.split(':');
    match parts.next() {
        Some("policy") => {
            let tools: usize = parse_num(spec, parts.next(), 3)?;
            let delay_ms: u64 = parse_num(spec, parts.next(), 0)?;
            let client = PolicyClient::new(tools).with_delay(std::time::Duration::from_millis(delay_ms));
            Ok(Arc::new(SharedClient(Arc::new(client))))
        }
        _ => Err(EvalError::UnknownBackend(spec.to_string())),
    }
}

/// `fixture[:<seed>]`.
pub fn fixture_tiles(spec: &str) -> Result<Arc<dyn TileProvider>, EvalError> {
    let mut parts = spec.split(':');
    match parts.next() {
        Some("fixture") => Ok(Arc::new(FixtureTileProvider::new(parse_num(spec, parts.next(), 0)?))),
        _ => Err(EvalError::UnknownBackend(spec.to_string())),
    }
}
