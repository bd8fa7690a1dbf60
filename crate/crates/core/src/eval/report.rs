use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, Method, MetricsReport};
use crate::agent::Transcript;
use crate::domain::{DatasetKind, Label};

/// Calls of one tool across a set of conversations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsage {
    pub tool: String,
    /// Every invocation counts, including repeats within a conversation.
    pub call_count: usize,
    /// Conversations with at least one call.
    pub conversations: usize,
    /// Fraction of those conversations whose final prediction was correct.
    pub accuracy_when_called: Option<f64>,
}

/// Per-tool call counts and accuracy when called.
///
/// Tools in `known_tools` are always reported, in that order; other tools that
/// were called follow in name order. A conversation without a final prediction
/// counts as incorrect.
pub fn tool_usage_report(
    transcripts: &[Transcript],
    truths: &HashMap<String, Label>,
    known_tools: &[String],
) -> Result<Vec<ToolUsage>, EvalError> {
    let mut calls: HashMap<&str, usize> = HashMap::new();
    let mut convs: HashMap<&str, (usize, usize)> = HashMap::new();
    for t in transcripts {
        let truth = truths
            .get(&t.test_image_id)
            .ok_or_else(|| EvalError::MissingTruth(t.test_image_id.clone()))?;
        let correct = t.final_prediction.is_some_and(|p| p.label == *truth);
        let mut seen: Vec<&str> = Vec::new();
        for c in &t.tool_calls {
            let name = c.request.tool_name.as_str();
            *calls.entry(name).or_default() += 1;
            if !seen.contains(&name) {
                seen.push(name);
                let e = convs.entry(name).or_default();
                e.0 += 1;
                e.1 += correct as usize;
            }
        }
    }
    let mut names: Vec<String> = known_tools.to_vec();
    let mut extra: Vec<&str> = calls.keys().copied().filter(|n| !known_tools.iter().any(|k| k == n)).collect();
    extra.sort_unstable();
    names.extend(extra.into_iter().map(String::from));
    Ok(names
        .into_iter()
        .map(|tool| {
            let call_count = calls.get(tool.as_str()).copied().unwrap_or(0);
            let (conversations, correct) = convs.get(tool.as_str()).copied().unwrap_or((0, 0));
            ToolUsage {
                call_count,
                conversations,
                accuracy_when_called: (conversations > 0).then(|| correct as f64 / conversations as f64),
                tool,
            }
        })
        .collect())
}

pub fn tool_usage_csv(rows: &[ToolUsage]) -> String {
    let mut out = String::from("tool,call_count,conversations,accuracy_when_called\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.tool,
            r.call_count,
            r.conversations,
            r.accuracy_when_called.map(|a| format!("{a:.4}")).unwrap_or_else(|| MISSING.to_string())
        );
    }
    out
}

/// Identifies one experiment's cell in the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResultKey {
    pub method: Method,
    pub dataset: DatasetKind,
    /// Labeled fraction in percent.
    pub percent: u32,
}

/// Rendered for values that are undefined.
pub const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTables {
    /// One row per result: method, dataset, fraction and five metrics.
    pub csv: String,
    /// Methods by dataset and fraction, with accuracy, F1 and AUC.
    pub main_markdown: String,
    /// Same layout with precision and recall.
    pub precision_recall_markdown: String,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| MISSING.to_string())
}

fn wide_table(
    results: &BTreeMap<ResultKey, MetricsReport>,
    metrics: &[(&str, fn(&MetricsReport) -> Option<f64>)],
) -> String {
    let mut columns: Vec<(DatasetKind, u32)> = results.keys().map(|k| (k.dataset, k.percent)).collect();
    columns.sort_unstable();
    columns.dedup();
    let mut methods: Vec<Method> = results.keys().map(|k| k.method).collect();
    methods.sort_unstable();
    methods.dedup();

    let mut out = String::from("| Method |");
    let mut rule = String::from("|---|");
    for (d, pct) in &columns {
        for (name, _) in metrics {
            let _ = write!(out, " {} {}% {} |", d.display_name(), pct, name);
            rule.push_str("---:|");
        }
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for m in methods {
        let _ = write!(out, "| {} |", m.display_name());
        for &(dataset, percent) in &columns {
            let report = results.get(&ResultKey {
                method: m,
                dataset,
                percent,
            });
            for (_, get) in metrics {
                let _ = write!(out, " {} |", fmt_opt(report.and_then(get), 2));
            }
        }
        out.push('\n');
    }
    out
}

/// Renders result tables. Rows are ordered by method, then dataset, then fraction.
pub fn emit_report(results: &BTreeMap<ResultKey, MetricsReport>) -> ReportTables {
    let mut csv = String::from("method,dataset,labeled_fraction,accuracy,f1,auc,precision,recall\n");
    for (k, r) in results {
        let _ = writeln!(
            csv,
            "{},{},{:.1},{:.4},{:.4},{},{:.4},{:.4}",
            k.method.as_str(),
            k.dataset.as_str(),
            k.percent as f64 / 100.0,
            r.accuracy,
            r.f1,
            fmt_opt(r.auc, 4),
            r.precision,
            r.recall
        );
    }
    ReportTables {
        csv,
        main_markdown: wide_table(
            results,
            &[
                ("Acc", |r| Some(r.accuracy)),
                ("F1", |r| Some(r.f1)),
                ("AUC", |r| r.auc),
            ],
        ),
        precision_recall_markdown: wide_table(
            results,
            &[("Prec", |r| Some(r.precision)), ("Rec", |r| Some(r.recall))],
        ),
    }
}
