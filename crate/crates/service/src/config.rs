use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use visagent_core::agent::AgentConfig;
use visagent_core::domain::DatasetKind;

/// A dataset whose labeled split backs retrieval and the prediction tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSetup {
    pub kind: DatasetKind,
    pub manifest: PathBuf,
    #[serde(default = "one")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Served at `/` when set.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_llm")]
    pub llm: String,
    #[serde(default = "default_tiles")]
    pub tiles: String,
    #[serde(default)]
    pub agent: AgentConfig,
    pub datasets: Vec<DatasetSetup>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_workers() -> usize {
    2
}
fn default_embedder() -> String {
    "thumbnail:4".into()
}
fn default_llm() -> String {
    "policy".into()
}
fn default_tiles() -> String {
    "fixture".into()
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, datasets: Vec<DatasetSetup>) -> Self {
        Self {
            listen: default_listen(),
            data_dir: data_dir.into(),
            workers: default_workers(),
            static_dir: None,
            embedder: default_embedder(),
            llm: default_llm(),
            tiles: default_tiles(),
            agent: AgentConfig::default(),
            datasets,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(s) = self.static_dir.as_mut() {
            fix(s);
        }
        for d in &mut self.datasets {
            fix(&mut d.manifest);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.datasets.is_empty() {
            return Err("at least one dataset must be configured".into());
        }
        let mut kinds: Vec<DatasetKind> = self.datasets.iter().map(|d| d.kind).collect();
        kinds.sort_by_key(|k| k.as_str());
        kinds.dedup();
        if kinds.len() != self.datasets.len() {
            return Err("each dataset kind may be configured once".into());
        }
        self.agent.validate().map_err(|e| e.to_string())
    }
}
