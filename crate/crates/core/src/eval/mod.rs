//! Metrics, the experiment runner and report tables.

mod backends;
mod metrics;
mod report;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_inference, AgentConfig, AgentError, InferenceContext, LmmClient, RunMeta, Transcript};
use crate::domain::{load_manifest, subsample_labeled, subsample_test, DatasetKind, DomainError, Label, Prediction};
use crate::embedding::{
    build_store, knn_classify, zeroshot_from_vectors, BuildOptions, EmbeddingCache, EmbeddingError,
    EmbeddingProvider,
};
use crate::probe::{mlp_forward, train_mlp, ProbeError, TrainConfig};
use crate::tools::{build_registry, TileProvider, ToolDeps, ToolError, ToolRegistry};

pub use backends::{fixture_embedder, fixture_llm, fixture_tiles, LmmBackend, ScriptBook, SharedClient};
pub use metrics::{auc, compute_metrics, Confusion, MetricsReport};
pub use report::{emit_report, tool_usage_csv, tool_usage_report, ReportTables, ResultKey, ToolUsage, MISSING};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no ground truth for `{0}`")]
    MissingTruth(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("{} of {total} item(s) failed; first: {}", failed.len(), failed.first().map(|f| f.1.as_str()).unwrap_or(""))]
    Incomplete { total: usize, failed: Vec<(String, String)> },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Knn,
    ZeroshotEmbed,
    MlpProbe,
    LmmZeroshot,
    LmmVisrag,
    LmmTools,
    LmmFull,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Knn,
        Method::ZeroshotEmbed,
        Method::MlpProbe,
        Method::LmmZeroshot,
        Method::LmmVisrag,
        Method::LmmTools,
        Method::LmmFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::ZeroshotEmbed => "zeroshot_embed",
            Method::MlpProbe => "mlp_probe",
            Method::LmmZeroshot => "lmm_zeroshot",
            Method::LmmVisrag => "lmm_visrag",
            Method::LmmTools => "lmm_tools",
            Method::LmmFull => "lmm_full",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Knn => "k-NN",
            Method::ZeroshotEmbed => "Embedding zero-shot",
            Method::MlpProbe => "Embedding + MLP",
            Method::LmmZeroshot => "LMM zero-shot",
            Method::LmmVisrag => "LMM + VisRAG",
            Method::LmmTools => "LMM + Tools",
            Method::LmmFull => "LMM + VisRAG + Tools",
        }
    }

    pub fn uses_llm(self) -> bool {
        matches!(self, Method::LmmZeroshot | Method::LmmVisrag | Method::LmmTools | Method::LmmFull)
    }

    /// Whether the agent sees retrieved examples.
    pub fn uses_retrieval(self) -> bool {
        matches!(self, Method::LmmVisrag | Method::LmmFull)
    }

    pub fn uses_tools(self) -> bool {
        matches!(self, Method::LmmTools | Method::LmmFull)
    }

    fn needs_store(self) -> bool {
        matches!(self, Method::Knn | Method::MlpProbe) || self.uses_retrieval() || self.uses_tools()
    }

    fn needs_probe(self) -> bool {
        self == Method::MlpProbe || self.uses_tools()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

fn default_fraction() -> f64 {
    1.0
}
fn default_test_n() -> usize {
    100
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
fn default_k() -> usize {
    3
}
fn default_parallelism() -> usize {
    1
}

/// One experiment: a method on a dataset at a labeled fraction.
///
/// Backends are named by id: `hash:<dim>[:<seed>]` or `thumbnail:<grid>` for
/// embeddings, `policy[:<tools>]` or `scripted:<file>` for the language model,
/// `fixture[:<seed>]` for map tiles. Front ends may add network-backed ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_kind: DatasetKind,
    pub manifest: PathBuf,
    pub method: Method,
    pub output_dir: PathBuf,
    #[serde(default = "default_fraction")]
    pub labeled_fraction: f64,
    /// Clamped to the size of the test split.
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_llm")]
    pub llm: String,
    #[serde(default = "default_tiles")]
    pub tiles: String,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl ExperimentConfig {
    pub fn new(dataset_kind: DatasetKind, manifest: impl Into<PathBuf>, method: Method, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_kind,
            manifest: manifest.into(),
            method,
            output_dir: output_dir.into(),
            labeled_fraction: default_fraction(),
            test_n: default_test_n(),
            seed: 0,
            embedder: default_embedder(),
            llm: default_llm(),
            tiles: default_tiles(),
            cache_dir: None,
            agent: AgentConfig::default(),
            knn_k: default_k(),
            parallelism: default_parallelism(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "labeled_fraction {} outside (0, 1]",
                self.labeled_fraction
            )));
        }
        if self.test_n == 0 {
            return Err(EvalError::InvalidConfig("test_n must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(EvalError::InvalidConfig("knn_k must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(EvalError::InvalidConfig("parallelism must be positive".into()));
        }
        if self.method.uses_llm() {
            self.agent.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| EvalError::InvalidConfig(e.to_string()))
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
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
    }

    pub fn result_key(&self) -> ResultKey {
        ResultKey {
            method: self.method,
            dataset: self.dataset_kind,
            percent: (self.labeled_fraction * 100.0).round() as u32,
        }
    }
}

/// Resolved backends for [`run_experiment`].
#[derive(Clone)]
pub struct ExperimentDeps {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub llm: Option<Arc<dyn LmmBackend>>,
    pub tiles: Option<Arc<dyn TileProvider>>,
    pub build: BuildOptions,
    /// Timestamp source for transcripts.
    pub clock: Arc<dyn Fn() -> String + Send + Sync>,
}

impl ExperimentDeps {
    /// Resolves the fixture backends named in `config`.
    pub fn fixtures(config: &ExperimentConfig) -> Result<Self, EvalError> {
        let embedder = fixture_embedder(&config.embedder)?;
        let llm = if config.method.uses_llm() {
            Some(fixture_llm(&config.llm)?)
        } else {
            None
        };
        let tiles = if config.dataset_kind.is_geospatial() && config.method.uses_tools() {
            Some(fixture_tiles(&config.tiles)?)
        } else {
            None
        };
        Ok(Self {
            embedder,
            llm,
            tiles,
            build: BuildOptions::default(),
            clock: Arc::new(system_clock),
        })
    }
}

/// Current UTC time in RFC 3339 form.
pub fn system_clock() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub id: String,
    pub true_label: Label,
    pub prediction: Prediction,
    pub n_tool_calls: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: String,
    true_label: i8,
    pred_label: i8,
    confidence: f64,
    score: f64,
    inconclusive: bool,
    n_tool_calls: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: MetricsReport,
    pub predictions: Vec<ItemPrediction>,
    pub transcripts: Vec<Transcript>,
}

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const FAILED_FILE: &str = "FAILED";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn write_predictions_csv(path: &Path, rows: &[ItemPrediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(CsvRow {
            id: r.id.clone(),
            true_label: r.true_label.as_i8(),
            pred_label: r.prediction.label.as_i8(),
            confidence: r.prediction.confidence,
            score: r.prediction.score,
            inconclusive: r.prediction.inconclusive,
            n_tool_calls: r.n_tool_calls,
        })
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<ItemPrediction>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row.map_err(|e| io_err(path, e))?;
        let label = |v: i8| Label::from_i64(v as i64).ok_or_else(|| io_err(path, format!("bad label {v}")));
        out.push(ItemPrediction {
            id: row.id,
            true_label: label(row.true_label)?,
            prediction: Prediction {
                label: label(row.pred_label)?,
                confidence: row.confidence,
                score: row.score,
                inconclusive: row.inconclusive,
            },
            n_tool_calls: row.n_tool_calls,
        });
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// An experiment's artifact directory as read back from disk.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    pub predictions: Vec<ItemPrediction>,
}

pub fn load_artifacts(dir: &Path) -> Result<Artifacts, EvalError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| io_err(&p, e))
    };
    let config = ExperimentConfig::from_json(&read(CONFIG_FILE)?)?;
    let metrics: MetricsReport =
        serde_json::from_str(&read(METRICS_FILE)?).map_err(|e| io_err(&dir.join(METRICS_FILE), e))?;
    let predictions = read_predictions_csv(&dir.join(PREDICTIONS_FILE))?;
    Ok(Artifacts {
        config,
        metrics,
        predictions,
    })
}

/// All transcripts under `dir/transcripts`, ordered by file name.
pub fn load_transcripts(dir: &Path) -> Result<Vec<Transcript>, EvalError> {
    let tdir = dir.join(TRANSCRIPTS_DIR);
    if !tdir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&tdir)
        .map_err(|e| io_err(&tdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Transcript::from_json(&text).map_err(|e| io_err(p, e))
        })
        .collect()
}

/// Runs one experiment and writes its artifact directory:
/// `config.json`, `predictions.csv`, `metrics.json` and, for language-model
/// methods, `transcripts/<conversation id>.json`.
///
/// Items are written in id order. If any item fails the successful rows are
/// still written, `metrics.json` is skipped and a `FAILED` file lists the
/// failures.
pub fn run_experiment(config: &ExperimentConfig, deps: &ExperimentDeps) -> Result<ExperimentOutcome, EvalError> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest)?;
    let method = config.method;
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let _ = fs::remove_file(out_dir.join(FAILED_FILE));
    write_text(&out_dir.join(CONFIG_FILE), &config.to_json())?;

    let labeled = subsample_labeled(&manifest, config.labeled_fraction, config.seed)?;
    let store = if method.needs_store() {
        let cache = match &config.cache_dir {
            Some(dir) => Some(EmbeddingCache::open(dir, &deps.embedder.id())?),
            None => None,
        };
        Some(build_store(&manifest, &labeled, deps.embedder.as_ref(), cache.as_ref(), &deps.build)?.0)
    } else {
        None
    };
    let probe = match (&store, method.needs_probe()) {
        (Some(s), true) => Some(Arc::new(train_mlp(
            &s.training_pairs(),
            &TrainConfig {
                seed: config.seed,
                ..TrainConfig::default()
            },
        )?)),
        _ => None,
    };
    let registry = if method.uses_tools() {
        build_registry(
            config.dataset_kind,
            ToolDeps {
                probe: probe.clone(),
                embedder: Some(deps.embedder.clone()),
                tiles: deps.tiles.clone(),
            },
        )?
    } else {
        ToolRegistry::empty(config.dataset_kind)
    };
    let zeroshot_texts = if method == Method::ZeroshotEmbed {
        let (p, n) = config.dataset_kind.zeroshot_texts();
        Some((
            deps.embedder.embed_text(p).map_err(EmbeddingError::from)?,
            deps.embedder.embed_text(n).map_err(EmbeddingError::from)?,
        ))
    } else {
        None
    };
    if method.uses_llm() && deps.llm.is_none() {
        return Err(EvalError::InvalidConfig(format!("{method} needs a language model backend")));
    }
    let mut agent_config = config.agent.clone();
    if agent_config.seed.is_none() {
        agent_config.seed = Some(config.seed);
    }

    let n = config.test_n.min(manifest.splits.test.len());
    let test_idx = subsample_test(&manifest, n, config.seed)?;

    type ItemResult = Result<(ItemPrediction, Option<Transcript>), String>;
    let classify = |index: usize| -> ItemResult {
        let item = manifest.load_image(index).map_err(|e| e.to_string())?;
        let (prediction, transcript) = match method {
            Method::Knn => {
                let q = deps.embedder.embed_image(&item.pixels).map_err(|e| e.to_string())?;
                let s = store.as_ref().expect("store built");
                (knn_classify(s, &q, config.knn_k).map_err(|e| e.to_string())?, None)
            }
            Method::ZeroshotEmbed => {
                let q = deps.embedder.embed_image(&item.pixels).map_err(|e| e.to_string())?;
                let (p, n) = zeroshot_texts.as_ref().expect("texts embedded");
                (zeroshot_from_vectors(&q, p, n).map_err(|e| e.to_string())?, None)
            }
            Method::MlpProbe => {
                let q = deps.embedder.embed_image(&item.pixels).map_err(|e| e.to_string())?;
                let p = mlp_forward(probe.as_ref().expect("probe trained"), &q).map_err(|e| e.to_string())?;
                let label = if p > 0.5 { Label::Positive } else { Label::Negative };
                (Prediction::from_score(label, p).map_err(|e| e.to_string())?, None)
            }
            _ => {
                let client: Arc<dyn LmmClient> = deps.llm.as_ref().expect("checked").client_for(&item.id);
                let ctx = InferenceContext {
                    kind: config.dataset_kind,
                    store: if method.uses_retrieval() { store.as_ref() } else { None },
                    embedder: deps.embedder.as_ref(),
                    examples: &manifest,
                    registry: &registry,
                    llm: client.as_ref(),
                };
                let meta = RunMeta {
                    conversation_id: file_safe(&format!("{}-{}", method.as_str(), item.id)),
                    created_at: (deps.clock)(),
                };
                let (p, t) = run_inference(&item, &ctx, &agent_config, meta).map_err(|e| e.to_string())?;
                (p, Some(t))
            }
        };
        let n_tool_calls = transcript.as_ref().map_or(0, |t| t.tool_calls.len());
        Ok((
            ItemPrediction {
                id: item.id.clone(),
                true_label: item.label,
                prediction,
                n_tool_calls,
            },
            transcript,
        ))
    };

    let slots: Vec<Mutex<Option<ItemResult>>> = test_idx.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.min(test_idx.len()).max(1) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= test_idx.len() {
                    break;
                }
                let r = classify(test_idx[k]);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });

    let mut predictions = Vec::new();
    let mut transcripts = Vec::new();
    let mut failed = Vec::new();
    for (k, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().unwrap().expect("every slot filled") {
            Ok((p, t)) => {
                predictions.push(p);
                transcripts.extend(t);
            }
            Err(msg) => failed.push((manifest.entry(test_idx[k]).id.clone(), msg)),
        }
    }
    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    transcripts.sort_by(|a, b| a.conversation_id.cmp(&b.conversation_id));

    write_predictions_csv(&out_dir.join(PREDICTIONS_FILE), &predictions)?;
    if !transcripts.is_empty() {
        let tdir = out_dir.join(TRANSCRIPTS_DIR);
        fs::create_dir_all(&tdir).map_err(|e| io_err(&tdir, e))?;
        for t in &transcripts {
            write_text(&tdir.join(format!("{}.json", t.conversation_id)), &t.to_json())?;
        }
    }
    if !failed.is_empty() {
        failed.sort();
        let text: String = failed.iter().map(|(id, m)| format!("{id}\t{m}\n")).collect();
        write_text(&out_dir.join(FAILED_FILE), &text)?;
        return Err(EvalError::Incomplete {
            total: test_idx.len(),
            failed,
        });
    }

    let pairs: Vec<(Label, Prediction)> = predictions.iter().map(|p| (p.true_label, p.prediction)).collect();
    let metrics = compute_metrics(&pairs)?;
    write_text(
        &out_dir.join(METRICS_FILE),
        &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    Ok(ExperimentOutcome {
        metrics,
        predictions,
        transcripts,
    })
}

/// Ground truth by test id, read from artifact predictions.
pub fn truths_from_predictions(rows: &[ItemPrediction]) -> HashMap<String, Label> {
    rows.iter().map(|r| (r.id.clone(), r.true_label)).collect()
}
