//! A one-hidden-layer feedforward network: `softmax(W2 · relu(W1 · x + b1) + b2)`.
//!
//! Sized for the combiners of the pipeline (hidden 3 for per-modality
//! stacking, hidden 10 for the 50-input fusion net, always two outputs) and
//! trained with plain mini-batch SGD on mean cross-entropy. Parameters are
//! values: training returns a new set and never mutates its input.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::GenderLabel;
use crate::numeric::{cross_entropy, dot, seeded_rng, softmax};

/// Floor on the denominator of the gradient-check relative error. Central
/// differences with step 1e-5 carry ~1e-11 of round-off, so gradients far
/// below this floor are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum MicroNetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("invalid training spec: {0}")]
    InvalidTrainSpec(String),
    #[error("non-finite input value")]
    NonFinite,
    #[error("parameter file: {0}")]
    Persistence(String),
}

pub type Result<T> = std::result::Result<T, MicroNetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroNetSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl MicroNetSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        MicroNetSpec { input_dim, hidden_dim, output_dim: 2, activation: Activation::Relu, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(MicroNetError::InvalidSpec(format!(
                "dimensions must be >= 1 (input {}, hidden {})",
                self.input_dim, self.hidden_dim
            )));
        }
        if self.output_dim != 2 {
            return Err(MicroNetError::InvalidSpec(format!("output_dim must be 2, got {}", self.output_dim)));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.hidden_dim * (self.input_dim + 1) + self.output_dim * (self.hidden_dim + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroNetParams {
    pub spec: MicroNetSpec,
    /// hidden_dim x input_dim
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// output_dim x hidden_dim
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as [`MicroNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(spec: &MicroNetSpec) -> Self {
        Gradients {
            w1: vec![vec![0.0; spec.input_dim]; spec.hidden_dim],
            b1: vec![0.0; spec.hidden_dim],
            w2: vec![vec![0.0; spec.hidden_dim]; spec.output_dim],
            b2: vec![0.0; spec.output_dim],
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.w1.iter().for_each(|r| out.extend_from_slice(r));
        out.extend_from_slice(&self.b1);
        self.w2.iter().for_each(|r| out.extend_from_slice(r));
        out.extend_from_slice(&self.b2);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { epochs: 200, learning_rate: 0.05, batch_size: 32, loss: Loss::CrossEntropy, seed: 0 }
    }
}

impl TrainSpec {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MicroNetError::InvalidTrainSpec("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MicroNetError::InvalidTrainSpec("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(MicroNetError::InvalidTrainSpec("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean loss over the data before the first update.
    pub initial_loss: f64,
    /// Running mean of mini-batch losses within each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over the data after the last update.
    pub final_loss: f64,
}

/// Glorot-uniform weights from `spec.seed`, zero biases.
pub fn init_network(spec: &MicroNetSpec) -> Result<MicroNetParams> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let a1 = (6.0 / (spec.input_dim + spec.hidden_dim) as f64).sqrt();
    let a2 = (6.0 / (spec.hidden_dim + spec.output_dim) as f64).sqrt();
    let w1 = (0..spec.hidden_dim)
        .map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-a1..a1)).collect())
        .collect();
    let w2 = (0..spec.output_dim)
        .map(|_| (0..spec.hidden_dim).map(|_| rng.gen_range(-a2..a2)).collect())
        .collect();
    Ok(MicroNetParams {
        spec: *spec,
        w1,
        b1: vec![0.0; spec.hidden_dim],
        w2,
        b2: vec![0.0; spec.output_dim],
    })
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MicroNetParams {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(MicroNetError::DimensionError { expected: self.spec.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MicroNetError::NonFinite);
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let pre: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(row, b)| dot(row, x) + b).collect();
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let logits = self.w2.iter().zip(&self.b2).map(|(row, b)| dot(row, &hidden) + b).collect();
        Activations { pre, hidden, logits }
    }

    /// Output-layer scores before the softmax.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).logits)
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.n_params());
        self.w1.iter().for_each(|r| out.extend_from_slice(r));
        out.extend_from_slice(&self.b1);
        self.w2.iter().for_each(|r| out.extend_from_slice(r));
        out.extend_from_slice(&self.b2);
        out
    }

    fn set_flat(&mut self, i: usize, v: f64) {
        let (h, d, o) = (self.spec.hidden_dim, self.spec.input_dim, self.spec.output_dim);
        let mut i = i;
        if i < h * d {
            self.w1[i / d][i % d] = v;
            return;
        }
        i -= h * d;
        if i < h {
            self.b1[i] = v;
            return;
        }
        i -= h;
        if i < o * h {
            self.w2[i / h][i % h] = v;
            return;
        }
        i -= o * h;
        self.b2[i] = v;
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (row, g) in self.w1.iter_mut().zip(&grads.w1) {
            row.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        self.b1.iter_mut().zip(&grads.b1).for_each(|(b, g)| *b -= lr * g);
        for (row, g) in self.w2.iter_mut().zip(&grads.w2) {
            row.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        self.b2.iter_mut().zip(&grads.b2).for_each(|(b, g)| *b -= lr * g);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: MicroNetParams = serde_json::from_str(s).map_err(|e| MicroNetError::Persistence(e.to_string()))?;
        p.spec.validate()?;
        let s = p.spec;
        let shapes_ok = p.w1.len() == s.hidden_dim
            && p.w1.iter().all(|r| r.len() == s.input_dim)
            && p.b1.len() == s.hidden_dim
            && p.w2.len() == s.output_dim
            && p.w2.iter().all(|r| r.len() == s.hidden_dim)
            && p.b2.len() == s.output_dim;
        if !shapes_ok {
            return Err(MicroNetError::Persistence("array shapes do not match spec".into()));
        }
        if p.flatten().iter().any(|v| !v.is_finite()) {
            return Err(MicroNetError::NonFinite);
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| MicroNetError::Persistence(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| MicroNetError::Persistence(e.to_string()))?;
        Self::from_json(&s)
    }
}

/// Class probabilities `(p_female, p_male)`.
pub fn forward(params: &MicroNetParams, x: &[f64]) -> Result<[f64; 2]> {
    let z = params.logits(x)?;
    let p = softmax(&z);
    Ok([p[0], p[1]])
}

fn check_data(params: &MicroNetParams, data: &[(Vec<f64>, GenderLabel)]) -> Result<()> {
    for (x, _) in data {
        params.check_input(x)?;
    }
    Ok(())
}

fn accumulate(params: &MicroNetParams, x: &[f64], y: GenderLabel, grads: &mut Gradients) -> f64 {
    let act = params.activations(x);
    let p = softmax(&act.logits);
    let loss = cross_entropy(&act.logits, y.index());
    // dL/dz for softmax + cross-entropy
    let dz: Vec<f64> = p.iter().enumerate().map(|(k, &pk)| pk - if k == y.index() { 1.0 } else { 0.0 }).collect();
    for (k, &dzk) in dz.iter().enumerate() {
        grads.b2[k] += dzk;
        for (j, &h) in act.hidden.iter().enumerate() {
            grads.w2[k][j] += dzk * h;
        }
    }
    for j in 0..params.spec.hidden_dim {
        if act.pre[j] <= 0.0 {
            continue;
        }
        let dh: f64 = dz.iter().enumerate().map(|(k, &dzk)| dzk * params.w2[k][j]).sum();
        grads.b1[j] += dh;
        for (i, &xi) in x.iter().enumerate() {
            grads.w1[j][i] += dh * xi;
        }
    }
    loss
}

fn scale(grads: &mut Gradients, s: f64) {
    grads.w1.iter_mut().flatten().for_each(|g| *g *= s);
    grads.b1.iter_mut().for_each(|g| *g *= s);
    grads.w2.iter_mut().flatten().for_each(|g| *g *= s);
    grads.b2.iter_mut().for_each(|g| *g *= s);
}

/// Mean cross-entropy over `data` and its analytic gradient.
pub fn loss_and_gradients(params: &MicroNetParams, data: &[(Vec<f64>, GenderLabel)]) -> Result<(f64, Gradients)> {
    check_data(params, data)?;
    let mut grads = Gradients::zeros(&params.spec);
    if data.is_empty() {
        return Ok((0.0, grads));
    }
    let mut total = 0.0;
    for (x, y) in data {
        total += accumulate(params, x, *y, &mut grads);
    }
    let n = data.len() as f64;
    scale(&mut grads, 1.0 / n);
    Ok((total / n, grads))
}

pub fn mean_loss(params: &MicroNetParams, data: &[(Vec<f64>, GenderLabel)]) -> Result<f64> {
    check_data(params, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = data.iter().map(|(x, y)| cross_entropy(&params.activations(x).logits, y.index())).sum();
    Ok(total / data.len() as f64)
}

/// Mini-batch SGD on mean cross-entropy; the batch order is shuffled each
/// epoch from `tspec.seed`.
pub fn train_with_history(
    params: &MicroNetParams,
    data: &[(Vec<f64>, GenderLabel)],
    tspec: &TrainSpec,
) -> Result<(MicroNetParams, TrainHistory)> {
    tspec.validate()?;
    check_data(params, data)?;
    let has = |l: GenderLabel| data.iter().any(|(_, y)| *y == l);
    if !has(GenderLabel::Female) || !has(GenderLabel::Male) {
        return Err(MicroNetError::SingleClassData);
    }

    let initial_loss = mean_loss(params, data)?;
    let mut current = params.clone();
    let mut rng = seeded_rng(tspec.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tspec.epochs);

    for _ in 0..tspec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(tspec.batch_size) {
            let mut grads = Gradients::zeros(&current.spec);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = &data[i];
                batch_loss += accumulate(&current, x, *y, &mut grads);
            }
            scale(&mut grads, 1.0 / batch.len() as f64);
            current.apply(&grads, tspec.learning_rate);
            epoch_total += batch_loss;
        }
        epoch_losses.push(epoch_total / data.len() as f64);
    }
    let final_loss = mean_loss(&current, data)?;
    Ok((current, TrainHistory { initial_loss, epoch_losses, final_loss }))
}

pub fn train(params: &MicroNetParams, data: &[(Vec<f64>, GenderLabel)], tspec: &TrainSpec) -> Result<MicroNetParams> {
    train_with_history(params, data, tspec).map(|(p, _)| p)
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter of a freshly initialised network.
///
/// Biases are drawn small and non-zero (from the network seed) so their
/// gradients are exercised too.
pub fn gradient_check(spec: &MicroNetSpec, data: &[(Vec<f64>, GenderLabel)]) -> Result<f64> {
    let mut params = init_network(spec)?;
    let mut rng = seeded_rng(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    params.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
    params.b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));

    let (_, grads) = loss_and_gradients(&params, data)?;
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        plus.set_flat(i, base[i] + GRAD_CHECK_STEP);
        let mut minus = params.clone();
        minus.set_flat(i, base[i] - GRAD_CHECK_STEP);
        let numeric = (mean_loss(&plus, data)? - mean_loss(&minus, data)?) / (2.0 * GRAD_CHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
