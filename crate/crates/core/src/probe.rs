//! Two-layer MLP probe on frozen embeddings.
//!
//! `p(e) = sigmoid(w2 · relu(W1 e + b1) + b2)`, trained with binary
//! cross-entropy and Adam. The same fitted probe serves as the supervised
//! baseline and as the backend of the dataset's prediction tool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Label;
use crate::embedding::EmbeddingVector;

pub const HIDDEN_UNITS: usize = 256;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Outputs are kept strictly inside (0, 1) even when the logit saturates.
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: probe expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("probe parameters contain non-finite values")]
    NonFiniteParams,
    #[error("training data needs both classes")]
    DegenerateData,
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid probe file: {0}")]
    InvalidFile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs < 1 {
            return Err(ProbeError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ProbeError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Probe weights. `w1` is stored row-major, `hidden × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    d: usize,
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    d: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ProbeFile {
            d: self.d,
            w1: self.w1.chunks(self.d).map(<[f64]>::to_vec).collect(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
            train_config: self.train_config.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = ProbeFile::deserialize(d)?;
        let hidden = f.b1.len();
        if f.w1.len() != hidden || f.w2.len() != hidden || f.w1.iter().any(|r| r.len() != f.d) || f.d == 0 {
            return Err(serde::de::Error::custom(ProbeError::InvalidFile("inconsistent shapes".into())));
        }
        Ok(MlpParams {
            d: f.d,
            hidden,
            w1: f.w1.into_iter().flatten().collect(),
            b1: f.b1,
            w2: f.w2,
            b2: f.b2,
            train_config: f.train_config,
        })
    }
}

/// Gradient of the loss with respect to every parameter, same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    fn zeros(hidden: usize, d: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * d],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable BCE on a logit: `max(z,0) - z*y + ln(1 + e^-|z|)`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl MlpParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        assert!(d > 0 && hidden > 0);
        Self {
            d,
            hidden,
            w1: vec![0.0; hidden * d],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            train_config: None,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d, hidden);
        let a1 = (6.0 / (d + hidden) as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.random_range(-a2..a2);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite())
    }

    /// Flat parameter access in the order w1, b1, w2, b2.
    pub fn get_flat(&self, i: usize) -> f64 {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < n1 {
            self.w1[i]
        } else if i < n1 + n2 {
            self.b1[i - n1]
        } else if i < n1 + n2 + n3 {
            self.w2[i - n1 - n2]
        } else {
            self.b2
        }
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < n1 {
            self.w1[i] = v
        } else if i < n1 + n2 {
            self.b1[i - n1] = v
        } else if i < n1 + n2 + n3 {
            self.w2[i - n1 - n2] = v
        } else {
            self.b2 = v
        }
    }

    fn check_input(&self, e: &[f64]) -> Result<(), ProbeError> {
        if e.len() != self.d {
            return Err(ProbeError::DimensionMismatch {
                expected: self.d,
                actual: e.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations `W1 e + b1`.
    pub fn pre_activations(&self, e: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.d)
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn logit_from_pre(&self, pre: &[f64]) -> f64 {
        pre.iter().zip(&self.w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>() + self.b2
    }

    pub fn logit(&self, e: &[f64]) -> f64 {
        self.logit_from_pre(&self.pre_activations(e))
    }

    /// BCE loss of a single example.
    pub fn loss(&self, e: &[f64], label: Label) -> f64 {
        bce_with_logit(self.logit(e), label.target())
    }

    /// Accumulates `scale * dLoss/dθ` for one example into `grad`; returns the loss.
    fn accumulate_gradient(&self, e: &[f64], label: Label, scale: f64, grad: &mut Gradients) -> f64 {
        let pre = self.pre_activations(e);
        let z = self.logit_from_pre(&pre);
        let y = label.target();
        let dz = (sigmoid(z) - y) * scale;
        grad.b2 += dz;
        for j in 0..self.hidden {
            let a = pre[j];
            if a > 0.0 {
                grad.w2[j] += dz * a;
                let da = dz * self.w2[j];
                grad.b1[j] += da;
                let row = &mut grad.w1[j * self.d..(j + 1) * self.d];
                for (g, x) in row.iter_mut().zip(e) {
                    *g += da * x;
                }
            }
        }
        bce_with_logit(z, y)
    }

    /// Analytic gradient of the single-example BCE loss.
    pub fn gradient(&self, e: &EmbeddingVector, label: Label) -> Result<Gradients, ProbeError> {
        self.check_input(e.values())?;
        let mut g = Gradients::zeros(self.hidden, self.d);
        self.accumulate_gradient(e.values(), label, 1.0, &mut g);
        Ok(g)
    }
}

/// Probability of the positive class.
pub fn mlp_forward(params: &MlpParams, e: &EmbeddingVector) -> Result<f64, ProbeError> {
    params.check_input(e.values())?;
    if !params.is_finite() {
        return Err(ProbeError::NonFiniteParams);
    }
    Ok(sigmoid(params.logit(e.values())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grad: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let flat_grad = grad
            .w1
            .iter()
            .chain(&grad.b1)
            .chain(&grad.w2)
            .chain(std::iter::once(&grad.b2));
        let mut i = 0;
        for g in flat_grad {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let p = params.get_flat(i);
            params.set_flat(i, p - self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
            i += 1;
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Mean loss over the full training set: index 0 is before the first
    /// update, index `k` after epoch `k`.
    pub losses: Vec<f64>,
}

fn mean_loss(params: &MlpParams, data: &[(EmbeddingVector, Label)]) -> f64 {
    data.iter().map(|(e, l)| params.loss(e.values(), *l)).sum::<f64>() / data.len() as f64
}

/// Fits a fresh probe with the default hidden width.
pub fn train_mlp(data: &[(EmbeddingVector, Label)], config: &TrainConfig) -> Result<MlpParams, ProbeError> {
    train_mlp_with_history(data, config, HIDDEN_UNITS).map(|o| o.params)
}

/// Seeded mini-batch Adam on mean BCE. The last partial batch is kept.
pub fn train_mlp_with_history(
    data: &[(EmbeddingVector, Label)],
    config: &TrainConfig,
    hidden: usize,
) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    if hidden == 0 {
        return Err(ProbeError::InvalidConfig("hidden width must be >= 1".into()));
    }
    let pos = data.iter().filter(|(_, l)| l.is_positive()).count();
    if pos == 0 || pos == data.len() {
        return Err(ProbeError::DegenerateData);
    }
    let d = data[0].0.dim();
    if let Some((e, _)) = data.iter().find(|(e, _)| e.dim() != d) {
        return Err(ProbeError::DimensionMismatch {
            expected: d,
            actual: e.dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::glorot(d, hidden, &mut rng);
    let mut adam = Adam::new(params.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = vec![mean_loss(&params, data)];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = Gradients::zeros(hidden, d);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (e, l) = &data[i];
                batch_loss += params.accumulate_gradient(e.values(), *l, scale, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(ProbeError::DivergedLoss { epoch });
            }
            adam.step(&mut params, &grad);
        }
        let loss = mean_loss(&params, data);
        if !loss.is_finite() || !params.is_finite() {
            return Err(ProbeError::DivergedLoss { epoch });
        }
        losses.push(loss);
    }
    params.train_config = Some(config.clone());
    Ok(TrainOutcome { params, losses })
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because their hidden unit sits at a ReLU kink.
    pub skipped_at_kink: usize,
}

/// Parameters sampled per gradient check.
pub const GRAD_CHECK_SAMPLE: usize = 64;

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic BCE gradients against central differences on a seeded
/// sample of at least 50 parameters (all of them when there are fewer).
pub fn gradient_check(
    params: &MlpParams,
    e: &EmbeddingVector,
    label: Label,
    seed: u64,
) -> Result<GradientCheck, ProbeError> {
    let analytic = params.gradient(e, label)?;
    let n = params.param_count();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(n.min(GRAD_CHECK_SAMPLE));

    let pre = params.pre_activations(e.values());
    let x_scale = e.values().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let kink = |j: usize| pre[j].abs() <= 10.0 * FD_STEP * x_scale;
    let (n1, n2) = (params.w1.len(), params.b1.len());
    let flat_grad = |i: usize| -> f64 {
        if i < n1 {
            analytic.w1[i]
        } else if i < n1 + n2 {
            analytic.b1[i - n1]
        } else if i < n1 + n2 + params.w2.len() {
            analytic.w2[i - n1 - n2]
        } else {
            analytic.b2
        }
    };

    let mut probe = params.clone();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kink: 0,
    };
    for i in indices {
        let unit = if i < n1 {
            Some(i / params.d)
        } else if i < n1 + n2 {
            Some(i - n1)
        } else {
            None
        };
        if unit.is_some_and(kink) {
            out.skipped_at_kink += 1;
            continue;
        }
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + FD_STEP);
        let up = probe.loss(e.values(), label);
        probe.set_flat(i, orig - FD_STEP);
        let down = probe.loss(e.values(), label);
        probe.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(flat_grad(i), numeric);
        out.max_relative_error = out.max_relative_error.max(err);
        out.checked += 1;
    }
    Ok(out)
}
