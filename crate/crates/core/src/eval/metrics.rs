use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{Label, Prediction};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the truths contain a single class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub n: usize,
    pub inconclusive_count: usize,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mann–Whitney AUC of `score` against the truths, with ties counted as half.
///
/// Uses mid-ranks over the sorted scores, so it runs in `O(n log n)`.
pub fn auc(pairs: &[(Label, f64)]) -> Option<f64> {
    let n_pos = pairs.iter().filter(|(l, _)| l.is_positive()).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].1 == pairs[order[i]].1 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| pairs[k].0.is_positive()).count();
        pos_rank_sum += mid * tied_pos as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Confusion-based metrics at the predicted labels, plus AUC over `score`.
pub fn compute_metrics(pairs: &[(Label, Prediction)]) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut c = Confusion::default();
    for (truth, p) in pairs {
        match (truth.is_positive(), p.label.is_positive()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let scored: Vec<(Label, f64)> = pairs.iter().map(|(t, p)| (*t, p.score)).collect();
    Ok(MetricsReport {
        accuracy: ratio(c.tp + c.tn, pairs.len()),
        f1,
        auc: auc(&scored),
        precision,
        recall,
        n: pairs.len(),
        inconclusive_count: pairs.iter().filter(|(_, p)| p.inconclusive).count(),
        confusion: c,
    })
}
