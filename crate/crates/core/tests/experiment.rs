mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use common::assert_golden;
use visagent_core::agent::{
    ChatOptions, LlmError, LmmClient, Message, Role, ScriptedClient, ToolCallRecord, ToolRequest, Transcript,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visagent_core::domain::{
    load_manifest, write_manifest, DatasetKind, DatasetManifest, Label, ManifestEntry, Prediction, Splits,
};
use visagent_core::raster::Raster;
use visagent_core::eval::{
    emit_report, load_artifacts, load_transcripts, run_experiment, tool_usage_csv, tool_usage_report,
    truths_from_predictions, Confusion, EvalError, ExperimentConfig, ExperimentDeps, LmmBackend, Method,
    MetricsReport, ResultKey, ScriptBook, FAILED_FILE, METRICS_FILE, PREDICTIONS_FILE,
};
use visagent_core::synthetic::{generate_dataset, SyntheticSpec};

fn dataset(dir: &Path, kind: DatasetKind, n_train: usize, n_test: usize) -> DatasetManifest {
    let mut spec = SyntheticSpec::new(kind, n_train, n_test);
    spec.seed = 11;
    generate_dataset(&spec, &dir.join("data")).unwrap()
}

fn config(dir: &Path, kind: DatasetKind, method: Method, out: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, dir.join("data/manifest.json"), method, dir.join(out));
    c.seed = 5;
    c
}

fn fixed_clock(deps: &mut ExperimentDeps) {
    deps.clock = Arc::new(|| "2026-01-01T00:00:00Z".to_string());
}

/// Two colour clusters: positives are bluish, negatives greenish, each image a
/// noisy flat field around its class centre.
fn blobs_dataset(dir: &Path, n_train: usize, n_test: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = dir.join("blobs");
    std::fs::create_dir_all(data.join("images")).unwrap();
    let mut entries = Vec::new();
    for i in 0..n_train + n_test {
        let positive = i % 3 == 0;
        let centre: [i32; 3] = if positive { [70, 90, 170] } else { [90, 150, 80] };
        let shift: Vec<i32> = (0..3).map(|_| rng.random_range(-25..=25)).collect();
        let img = Raster::from_fn(16, 16, 3, |_, _, c| {
            (centre[c] + shift[c] + rng.random_range(-10..=10)).clamp(0, 255) as u8
        })
        .unwrap();
        let path = format!("images/b{i:03}.png");
        std::fs::write(data.join(&path), img.encode_png().unwrap()).unwrap();
        entries.push(ManifestEntry {
            id: format!("b{i:03}"),
            path,
            label: if positive { Label::Positive } else { Label::Negative },
            lat: None,
            lon: None,
            zoom: None,
        });
    }
    let m = DatasetManifest {
        name: "blobs".into(),
        positive_fraction_hint: None,
        entries,
        splits: Splits {
            train: (0..n_train).collect(),
            test: (n_train..n_train + n_test).collect(),
        },
        base_dir: data.clone(),
    };
    let path = data.join("manifest.json");
    write_manifest(&m, &path).unwrap();
    path
}

#[test]
fn knn_separates_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = blobs_dataset(dir.path(), 60, 40);
    let mut cfg = ExperimentConfig::new(DatasetKind::Solar, manifest, Method::Knn, dir.path().join("knn"));
    cfg.seed = 5;
    let out = run_experiment(&cfg, &ExperimentDeps::fixtures(&cfg).unwrap()).unwrap();
    assert_eq!(out.metrics.n, 40);
    assert!(out.metrics.accuracy >= 0.95, "accuracy {}", out.metrics.accuracy);
    assert!(cfg.output_dir.join(METRICS_FILE).exists());
    assert!(out.transcripts.is_empty());
}

#[test]
fn mlp_probe_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), DatasetKind::Solar, 40, 20);
    let mut files = Vec::new();
    for out in ["a", "b"] {
        let mut cfg = config(dir.path(), DatasetKind::Solar, Method::MlpProbe, out);
        cfg.labeled_fraction = 0.2;
        run_experiment(&cfg, &ExperimentDeps::fixtures(&cfg).unwrap()).unwrap();
        let read = |f: &str| std::fs::read(cfg.output_dir.join(f)).unwrap();
        files.push((read(METRICS_FILE), read(PREDICTIONS_FILE)));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_json_round_trip_and_unknown_fields() {
    let cfg = config(Path::new("/tmp/x"), DatasetKind::Aquaculture, Method::LmmFull, "out");
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["bogus"] = 1.into();
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

fn test_ids_by_label(m: &DatasetManifest) -> (Vec<String>, Vec<String>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in &m.splits.test {
        let e = m.entry(i);
        if e.label.is_positive() {
            pos.push(e.id.clone())
        } else {
            neg.push(e.id.clone())
        }
    }
    (pos, neg)
}

#[test]
fn scripted_full_agent_metrics_are_hand_computed() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), DatasetKind::Eelgrass, 20, 10);
    let (pos, neg) = test_ids_by_label(&m);
    assert_eq!((pos.len(), neg.len()), (3, 7));

    let mut book = ScriptBook {
        default: vec!["ANSWER: negative CONFIDENCE: 0.8".into()],
        ..ScriptBook::default()
    };
    let mut s = |id: &String, lines: &[&str]| {
        book.scripts.insert(id.clone(), lines.iter().map(|l| l.to_string()).collect());
    };
    s(&pos[0], &["TOOL: SharpenTool", "ANSWER: positive CONFIDENCE: 0.9"]);
    s(&pos[1], &["ANSWER: negative CONFIDENCE: 0.6"]);
    s(&pos[2], &["TOOL: PredictEelgrassWastingDiseaseTool", "ANSWER: positive CONFIDENCE: 0.8"]);
    s(&neg[0], &["ANSWER: positive CONFIDENCE: 0.7"]);
    s(&neg[1], &["no idea"]);

    let mut cfg = config(dir.path(), DatasetKind::Eelgrass, Method::LmmFull, "full");
    cfg.parallelism = 3;
    let mut deps = ExperimentDeps::fixtures(&cfg).unwrap();
    deps.llm = Some(Arc::new(book));
    fixed_clock(&mut deps);
    let out = run_experiment(&cfg, &deps).unwrap();

    // positive scores 0.9, 0.4, 0.8 against negative scores 0.7, 0.5 and five 0.2:
    // 7 + 5 + 7 = 19 of 21 pairs ordered correctly
    let mm = &out.metrics;
    assert_eq!(mm.confusion, Confusion { tp: 2, fp: 1, tn: 6, fn_: 1 });
    assert_eq!(mm.accuracy, 0.8);
    assert_eq!(mm.precision, 2.0 / 3.0);
    assert_eq!(mm.recall, 2.0 / 3.0);
    assert!((mm.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((mm.auc.unwrap() - 19.0 / 21.0).abs() < 1e-12);
    assert_eq!(mm.inconclusive_count, 1);

    assert_eq!(out.transcripts.len(), 10);
    let t0 = out.transcripts.iter().find(|t| t.test_image_id == pos[0]).unwrap();
    assert_eq!(t0.tool_names(), vec!["SharpenTool"]);
    assert!(t0.visrag_pos_id.is_some() && t0.visrag_neg_id.is_some());
    assert_eq!(t0.messages[0].images.len(), 3);

    let art = load_artifacts(&cfg.output_dir).unwrap();
    assert_eq!(&art.metrics, mm);
    assert_eq!(art.predictions, out.predictions);
    assert_eq!(art.config, cfg);
    let loaded = load_transcripts(&cfg.output_dir).unwrap();
    assert_eq!(loaded, out.transcripts);

    let truths = truths_from_predictions(&art.predictions);
    let usage = tool_usage_report(&loaded, &truths, &[]).unwrap();
    let counts: Vec<_> = usage.iter().map(|u| (u.tool.as_str(), u.call_count, u.accuracy_when_called)).collect();
    assert_eq!(
        counts,
        vec![("PredictEelgrassWastingDiseaseTool", 1, Some(1.0)), ("SharpenTool", 1, Some(1.0))]
    );

    // parallel and serial runs write identical artifacts
    let mut serial = cfg.clone();
    serial.parallelism = 1;
    serial.output_dir = dir.path().join("serial");
    run_experiment(&serial, &deps).unwrap();
    for f in [METRICS_FILE, PREDICTIONS_FILE] {
        assert_eq!(
            std::fs::read(cfg.output_dir.join(f)).unwrap(),
            std::fs::read(serial.output_dir.join(f)).unwrap()
        );
    }
}

struct FailFor(String);

struct Down;

impl LmmClient for Down {
    fn model_id(&self) -> String {
        "down".into()
    }
    fn chat(&self, _: &[Message], _: &ChatOptions) -> Result<String, LlmError> {
        Err(LlmError::Unavailable {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

impl LmmBackend for FailFor {
    fn client_for(&self, item_id: &str) -> Arc<dyn LmmClient> {
        if item_id == self.0 {
            Arc::new(Down)
        } else {
            Arc::new(ScriptedClient::new(["ANSWER: negative CONFIDENCE: 0.9"]))
        }
    }
}

#[test]
fn failed_items_leave_a_marker_and_partial_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), DatasetKind::Solar, 10, 6);
    let victim = m.entry(m.splits.test[2]).id.clone();
    let cfg = config(dir.path(), DatasetKind::Solar, Method::LmmZeroshot, "partial");
    let mut deps = ExperimentDeps::fixtures(&cfg).unwrap();
    deps.llm = Some(Arc::new(FailFor(victim.clone())));
    match run_experiment(&cfg, &deps) {
        Err(EvalError::Incomplete { total, failed }) => {
            assert_eq!(total, 6);
            assert_eq!(failed.len(), 1);
            assert_eq!(failed[0].0, victim);
        }
        other => panic!("expected Incomplete, got {other:?}"),
    }
    let marker = std::fs::read_to_string(cfg.output_dir.join(FAILED_FILE)).unwrap();
    assert!(marker.starts_with(&victim));
    assert!(!cfg.output_dir.join(METRICS_FILE).exists());
    let csv = std::fs::read_to_string(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(!csv.contains(&victim));
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), DatasetKind::Solar, Method::Knn, "none");
    assert!(run_experiment(&cfg, &ExperimentDeps::fixtures(&cfg).unwrap()).is_err());
    assert!(load_manifest(dir.path().join("data/manifest.json")).is_err());
}

fn transcript(i: usize, truth_positive: bool, answer: Option<Label>, tools: &[&str]) -> (Transcript, String, Label) {
    let id = format!("img-{i}");
    let t = Transcript {
        conversation_id: format!("c{i}"),
        dataset_kind: DatasetKind::Eelgrass,
        test_image_id: id.clone(),
        messages: vec![Message {
            role: Role::System,
            text: "sys".into(),
            images: vec![],
            tool: None,
        }],
        tool_calls: tools
            .iter()
            .enumerate()
            .map(|(k, name)| ToolCallRecord {
                turn: k + 1,
                request: ToolRequest {
                    tool_name: name.to_string(),
                    raw_text: format!("TOOL: {name}"),
                },
                result_summary: "ok".into(),
                ok: true,
            })
            .collect(),
        final_prediction: answer.map(|l| Prediction::new(l, 0.8).unwrap()),
        visrag_pos_id: None,
        visrag_neg_id: None,
        visrag_pos_similarity: None,
        visrag_neg_similarity: None,
        model_id: "scripted".into(),
        created_at: "2026-01-01T00:00:00Z".into(),
    };
    let truth = if truth_positive { Label::Positive } else { Label::Negative };
    (t, id, truth)
}

#[test]
fn tool_usage_on_ten_transcripts() {
    use Label::*;
    const P: &str = "PredictEelgrassWastingDiseaseTool";
    const S: &str = "SharpenTool";
    const E: &str = "EdgeDetectionTool";
    const B: &str = "AdjustBrightnessTool";
    let corpus = [
        transcript(0, true, Some(Positive), &[P, S]),
        transcript(1, true, Some(Negative), &[P]),
        transcript(2, false, Some(Negative), &[S, S, E]),
        transcript(3, false, Some(Positive), &[E]),
        transcript(4, true, Some(Positive), &[]),
        transcript(5, false, Some(Negative), &[P, P]),
        transcript(6, true, None, &[S]),
        transcript(7, false, Some(Negative), &[P, E, S]),
        transcript(8, true, Some(Positive), &[P, P, P]),
        transcript(9, false, Some(Positive), &["MysteryTool"]),
    ];
    let truths: HashMap<String, Label> = corpus.iter().map(|(_, id, l)| (id.clone(), *l)).collect();
    let transcripts: Vec<Transcript> = corpus.into_iter().map(|(t, _, _)| t).collect();
    let known: Vec<String> = [P, S, E, B].iter().map(|s| s.to_string()).collect();
    let usage = tool_usage_report(&transcripts, &truths, &known).unwrap();

    // P: calls 1+1+2+1+3 = 8 in conversations 0,1,5,7,8; correct 0,5,7,8
    // S: calls 1+2+1+1 = 5 in 0,2,6,7; correct 0,2,7
    // E: calls 1+1+1 = 3 in 2,3,7; correct 2,7
    // B: never called
    // MysteryTool: 1 call in 9, wrong
    let got: Vec<_> = usage
        .iter()
        .map(|u| (u.tool.as_str(), u.call_count, u.conversations, u.accuracy_when_called))
        .collect();
    assert_eq!(
        got,
        vec![
            (P, 8, 5, Some(0.8)),
            (S, 5, 4, Some(0.75)),
            (E, 3, 3, Some(2.0 / 3.0)),
            (B, 0, 0, None),
            ("MysteryTool", 1, 1, Some(0.0)),
        ]
    );
    assert_eq!(
        tool_usage_csv(&usage),
        "tool,call_count,conversations,accuracy_when_called\n\
         PredictEelgrassWastingDiseaseTool,8,5,0.8000\n\
         SharpenTool,5,4,0.7500\n\
         EdgeDetectionTool,3,3,0.6667\n\
         AdjustBrightnessTool,0,0,—\n\
         MysteryTool,1,1,0.0000\n"
    );

    let mut partial = truths.clone();
    partial.remove("img-3");
    assert!(matches!(
        tool_usage_report(&transcripts, &partial, &known),
        Err(EvalError::MissingTruth(id)) if id == "img-3"
    ));
}

fn report(accuracy: f64, f1: f64, auc: Option<f64>, precision: f64, recall: f64) -> MetricsReport {
    MetricsReport {
        accuracy,
        f1,
        auc,
        precision,
        recall,
        n: 100,
        inconclusive_count: 0,
        confusion: Confusion::default(),
    }
}

#[test]
fn report_tables_golden() {
    let mut results = BTreeMap::new();
    let key = |method, percent| ResultKey {
        method,
        dataset: DatasetKind::Eelgrass,
        percent,
    };
    results.insert(key(Method::Knn, 20), report(0.81, 0.7, Some(0.8625), 0.72, 0.68));
    results.insert(key(Method::Knn, 100), report(0.85, 0.75, Some(0.9), 0.8, 0.7058));
    results.insert(key(Method::LmmFull, 20), report(0.9, 0.88, None, 0.91, 0.85));
    results.insert(key(Method::LmmFull, 100), report(0.93, 0.9, Some(0.95), 0.925, 0.875));
    let tables = emit_report(&results);
    assert_eq!(tables.csv.lines().count(), 5);
    assert!(tables.csv.lines().nth(3).unwrap().contains(",—,"));
    assert_golden("report.csv", &tables.csv);
    assert_golden("report_main.md", &tables.main_markdown);
    assert_golden("report_precision_recall.md", &tables.precision_recall_markdown);
}
