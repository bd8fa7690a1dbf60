//! The `visagent` command line.
//!
//! Every subcommand prints its effective configuration to stderr before it
//! does anything. Exit codes: 0 on success, 1 when a `--min-accuracy` gate
//! fails, 2 on any operational error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use visagent_core::domain::{load_manifest, subsample_labeled, DatasetKind};
use visagent_core::embedding::{build_store, BuildOptions, EmbeddingCache};
use visagent_core::eval::{
    emit_report, load_artifacts, load_transcripts, read_predictions_csv, tool_usage_csv, tool_usage_report,
    truths_from_predictions, EvalError, ExperimentConfig, Method, ResultKey, CONFIG_FILE, METRICS_FILE,
    PREDICTIONS_FILE,
};
use visagent_core::probe::{mlp_forward, train_mlp, TrainConfig};
use visagent_core::synthetic::{generate_dataset, SyntheticSpec};
use visagent_core::tools::tool_names;
use visagent_service::{Backends, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "visagent", version, about = "Retrieval-augmented, tool-using image classification agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed the train split of a manifest into a cache directory.
    Embed(EmbedArgs),
    /// Train the MLP probe on cached or fresh embeddings and write its parameters.
    TrainProbe(TrainProbeArgs),
    /// Run one experiment and write its artifact directory.
    Run(RunArgs),
    /// Combine artifact directories into result tables.
    Report(ReportArgs),
    /// Count tool calls and accuracy-when-called across transcripts.
    ToolUsage(ToolUsageArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Generate a procedural two-class dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedding backend, e.g. `thumbnail:4`, `hash:64:7` or an endpoint URL.
    #[arg(long, default_value = "thumbnail:4")]
    pub provider: String,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "thumbnail:4")]
    pub provider: String,
    /// Embedding cache directory to read and extend.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Where to write the parameters as JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config JSON; relative paths in it are relative to the file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub llm: Option<String>,
    #[arg(long)]
    pub tiles: Option<String>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Exit with status 1 when accuracy ends up below this value.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Artifact directories, or directories whose subdirectories are artifacts.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Directory for report.csv and the markdown tables; the CSV always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToolUsageArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// CSV file to write; the CSV always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config JSON; relative paths in it are relative to the file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub llm: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: DatasetKind,
    #[arg(long, default_value_t = 40)]
    pub train: usize,
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    #[arg(long, default_value_t = 0.3)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub tile_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, PartialEq, Eq)]
pub enum CliError {
    /// A CI gate failed.
    Gate(String),
    /// Bad input, missing files or unreachable backends.
    Operational(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gate(_) => 1,
            CliError::Operational(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Gate(m) | CliError::Operational(m) => m,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Operational(e.to_string())
    }
}

fn op(e: impl std::fmt::Display) -> CliError {
    CliError::Operational(e.to_string())
}

fn echo(config: &serde_json::Value) {
    eprintln!(
        "effective config:\n{}",
        serde_json::to_string_pretty(config).expect("json value serializes")
    );
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| op(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| op(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Embed(a) => embed(a),
        Command::TrainProbe(a) => train_probe(a),
        Command::Run(a) => run_experiment(a),
        Command::Report(a) => report(a),
        Command::ToolUsage(a) => tool_usage(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    }
}

fn embed(a: EmbedArgs) -> Result<(), CliError> {
    echo(&json!({
        "command": "embed",
        "manifest": a.manifest,
        "provider": a.provider,
        "out": a.out,
        "split": "train",
        "parallelism": a.parallelism,
    }));
    let manifest = load_manifest(&a.manifest).map_err(op)?;
    let provider = visagent_http::resolve::embedder(&a.provider)?;
    let cache = EmbeddingCache::open(&a.out, &provider.id()).map_err(op)?;
    let opts = BuildOptions {
        parallelism: a.parallelism.max(1),
        ..BuildOptions::default()
    };
    eprintln!("embedding {} train image(s) with {}", manifest.splits.train.len(), provider.id());
    let (_, report) = build_store(&manifest, &manifest.splits.train, provider.as_ref(), Some(&cache), &opts).map_err(op)?;
    eprintln!("{} cached, {} embedded", report.cached, report.embedded);
    eprintln!("cache: {}", cache.path().display());
    Ok(())
}

fn train_probe(a: TrainProbeArgs) -> Result<(), CliError> {
    let train = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    echo(&json!({
        "command": "train-probe",
        "manifest": a.manifest,
        "provider": a.provider,
        "cache": a.cache,
        "fraction": a.fraction,
        "train": train,
        "out": a.out,
    }));
    train.validate().map_err(op)?;
    let manifest = load_manifest(&a.manifest).map_err(op)?;
    let provider = visagent_http::resolve::embedder(&a.provider)?;
    let cache = match &a.cache {
        Some(dir) => Some(EmbeddingCache::open(dir, &provider.id()).map_err(op)?),
        None => None,
    };
    let labeled = subsample_labeled(&manifest, a.fraction, a.seed).map_err(op)?;
    let (store, _) =
        build_store(&manifest, &labeled, provider.as_ref(), cache.as_ref(), &BuildOptions::default()).map_err(op)?;
    let data = store.training_pairs();
    let params = train_mlp(&data, &train).map_err(op)?;
    let correct = data
        .iter()
        .filter(|(e, l)| mlp_forward(&params, e).is_ok_and(|p| (p > 0.5) == l.is_positive()))
        .count();
    eprintln!(
        "trained on {} example(s); train accuracy {:.4}",
        data.len(),
        correct as f64 / data.len() as f64
    );
    let text = serde_json::to_string(&params).map_err(op)?;
    write_file(&a.out, &text)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn run_experiment(a: RunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| op(format!("{}: {e}", a.config.display())))?;
    let mut config =
        ExperimentConfig::from_json(&text).map_err(|e| op(format!("{}: {e}", a.config.display())))?;
    config.resolve_paths(a.config.parent().unwrap_or(Path::new(".")));
    if let Some(m) = a.method {
        config.method = m;
    }
    if let Some(f) = a.fraction {
        config.labeled_fraction = f;
    }
    if let Some(n) = a.test_n {
        config.test_n = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(o) = a.out {
        config.output_dir = o;
    }
    if let Some(e) = a.embedder {
        config.embedder = e;
    }
    if let Some(l) = a.llm {
        config.llm = l;
    }
    if let Some(t) = a.tiles {
        config.tiles = t;
    }
    if let Some(c) = a.cache {
        config.cache_dir = Some(c);
    }
    if let Some(p) = a.parallelism {
        config.parallelism = p;
    }
    eprintln!("effective config:\n{}", config.to_json());
    config.validate()?;

    let deps = visagent_http::resolve::experiment_deps(&config)?;
    let outcome = match visagent_core::eval::run_experiment(&config, &deps) {
        Ok(o) => o,
        Err(EvalError::Incomplete { total, failed }) => {
            let lines: Vec<String> = failed.iter().map(|(id, m)| format!("  {id}: {m}")).collect();
            return Err(CliError::Operational(format!(
                "{} of {total} item(s) failed; partial results in {}\n{}",
                failed.len(),
                config.output_dir.display(),
                lines.join("\n")
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let m = &outcome.metrics;
    eprintln!(
        "{} on {} ({} items): accuracy {:.4}, f1 {:.4}, auc {}",
        config.method,
        config.dataset_kind.as_str(),
        m.n,
        m.accuracy,
        m.f1,
        m.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into())
    );
    eprintln!("artifacts: {}", config.output_dir.display());
    println!("{}", serde_json::to_string_pretty(m).map_err(op)?);
    if let Some(min) = a.min_accuracy {
        if m.accuracy < min {
            return Err(CliError::Gate(format!("accuracy {:.4} is below the required {min}", m.accuracy)));
        }
    }
    Ok(())
}

/// Artifact directories named directly or found one level below.
fn artifact_dirs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for dir in inputs {
        if !dir.is_dir() {
            return Err(op(format!("{}: not a directory", dir.display())));
        }
        if dir.join(CONFIG_FILE).is_file() {
            out.push(dir.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| op(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CONFIG_FILE).is_file())
            .collect();
        if subs.is_empty() {
            return Err(op(format!("{}: no artifact directories (no {CONFIG_FILE} found)", dir.display())));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    echo(&json!({ "command": "report", "in": a.inputs, "out": a.out }));
    let dirs = artifact_dirs(&a.inputs)?;
    let mut results = BTreeMap::new();
    let mut origin: BTreeMap<ResultKey, PathBuf> = BTreeMap::new();
    for dir in &dirs {
        if !dir.join(METRICS_FILE).is_file() {
            return Err(op(format!(
                "{}: {METRICS_FILE} missing; the run did not complete, rerun it first",
                dir.display()
            )));
        }
        let art = load_artifacts(dir)?;
        let key = art.config.result_key();
        if let Some(prev) = origin.insert(key, dir.clone()) {
            return Err(op(format!(
                "{} and {} hold the same method, dataset and fraction",
                prev.display(),
                dir.display()
            )));
        }
        results.insert(key, art.metrics);
    }
    let tables = emit_report(&results);
    if let Some(out) = &a.out {
        write_file(&out.join("report.csv"), &tables.csv)?;
        write_file(&out.join("report_main.md"), &tables.main_markdown)?;
        write_file(&out.join("report_precision_recall.md"), &tables.precision_recall_markdown)?;
        eprintln!("wrote {} result(s) to {}", results.len(), out.display());
    }
    print!("{}", tables.csv);
    Ok(())
}

fn tool_usage(a: ToolUsageArgs) -> Result<(), CliError> {
    echo(&json!({ "command": "tool-usage", "in": a.inputs, "out": a.out }));
    let dirs = artifact_dirs(&a.inputs)?;
    let mut known: Vec<String> = Vec::new();
    let mut transcripts = Vec::new();
    let mut truths = std::collections::HashMap::new();
    for dir in &dirs {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| op(format!("{}: {e}", cfg_path.display())))?;
        let config = ExperimentConfig::from_json(&text)?;
        if config.method.uses_tools() {
            for name in tool_names(config.dataset_kind) {
                if !known.iter().any(|k| k == name) {
                    known.push(name.to_string());
                }
            }
        }
        truths.extend(truths_from_predictions(&read_predictions_csv(&dir.join(PREDICTIONS_FILE))?));
        transcripts.extend(load_transcripts(dir)?);
    }
    eprintln!("{} transcript(s) from {} director(ies)", transcripts.len(), dirs.len());
    let rows = tool_usage_report(&transcripts, &truths, &known)?;
    let csv = tool_usage_csv(&rows);
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| op(format!("{}: {e}", a.config.display())))?;
    let mut config = ServiceConfig::from_json(&text).map_err(|e| op(format!("{}: {e}", a.config.display())))?;
    config.resolve_paths(a.config.parent().unwrap_or(Path::new(".")));
    if let Some(l) = a.listen {
        config.listen = l;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    if let Some(d) = a.data_dir {
        config.data_dir = d;
    }
    if let Some(l) = a.llm {
        config.llm = l;
    }
    eprintln!("effective config:\n{}", config.to_json());
    config.validate().map_err(op)?;
    let backends = Backends::resolve(&config).map_err(op)?;
    let rt = tokio::runtime::Runtime::new().map_err(op)?;
    rt.block_on(visagent_service::serve(config, backends)).map_err(op)
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        kind: a.kind,
        n_train: a.train,
        n_test: a.test,
        positive_fraction: a.positive_fraction,
        size: a.size,
        seed: a.seed,
        tile_seed: a.tile_seed,
    };
    echo(&json!({
        "command": "synth",
        "kind": a.kind.as_str(),
        "train": a.train,
        "test": a.test,
        "positive_fraction": a.positive_fraction,
        "size": a.size,
        "seed": a.seed,
        "tile_seed": a.tile_seed,
        "out": a.out,
    }));
    let manifest = generate_dataset(&spec, &a.out).map_err(op)?;
    eprintln!(
        "wrote {} image(s) and {}",
        manifest.entries.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}
