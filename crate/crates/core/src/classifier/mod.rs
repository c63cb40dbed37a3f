//! Feed-forward classifier over frozen email embeddings.
//!
//! Three weight matrices (`d → h₁ → h₂ → L`) with ReLU between layers and an
//! independent sigmoid per output, trained jointly over all binary labels
//! with class-weighted binary cross-entropy, AdamW and a one-cycle schedule.
//! The network is generic over the float type: production training runs in
//! `f32`, gradient checking in `f64`.

mod io;
mod optim;

use std::collections::BTreeMap;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_bundle, save_bundle, MODEL_FILE_VERSION};
pub use optim::{AdamParams, AdamW, OneCycle};

use crate::error::{Error, Result};

/// Maximum positive-class weight used to counter label imbalance.
pub const MAX_POS_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default = "d_hidden")]
    pub hidden: (usize, usize),
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_max_lr")]
    pub max_lr: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_hidden() -> (usize, usize) {
    (256, 64)
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.98
}
fn d_eps() -> f64 {
    1e-9
}
fn d_max_lr() -> f64 {
    5e-4
}
fn d_weight_decay() -> f64 {
    1e-5
}
fn d_dropout() -> f64 {
    0.1
}
fn d_epochs() -> usize {
    40
}
fn d_batch() -> usize {
    32
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            max_lr: d_max_lr(),
            weight_decay: d_weight_decay(),
            dropout_rate: d_dropout(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.0 == 0 || self.hidden.1 == 0 {
            return Err(Error::Config(
                "epochs, batch_size and hidden sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dense network with all parameters in one flat vector.
///
/// Layer `l` stores its `out × in` weight matrix row-major followed by its
/// bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T = f32> {
    dims: Vec<usize>,
    params: Vec<T>,
}

/// Activations kept from a forward pass for backpropagation.
struct Tape<T> {
    /// Post-activation (post-dropout) values per layer input, plus logits.
    layers: Vec<Vec<T>>,
    /// Dropout scale per hidden unit (0 or 1/(1-rate)); empty when off.
    masks: Vec<Vec<T>>,
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

impl<T: Float> ClassifierModel<T> {
    /// Model with every parameter zero.
    pub fn zeros(dims: &[usize]) -> Self {
        let n = param_count(dims);
        Self {
            dims: dims.to_vec(),
            params: vec![T::zero(); n],
        }
    }

    /// He-uniform initialisation for ReLU layers, Glorot for the output
    /// layer, zero biases.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(dims);
        let layers = dims.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (inp, out) = (dims[l], dims[l + 1]);
            let bound = if l + 1 < layers {
                (6.0 / inp as f64).sqrt()
            } else {
                (6.0 / (inp + out) as f64).sqrt()
            };
            for w in &mut m.params[offset..offset + inp * out] {
                *w = cast(rng.random_range(-bound..bound));
            }
            offset += inp * out + out;
        }
        m
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn from_params(dims: &[usize], params: Vec<T>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid layer dims {dims:?}")));
        }
        if params.len() != param_count(dims) {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for dims {dims:?}, expected {}",
                params.len(),
                param_count(dims)
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn cast<U: Float>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            dims: self.dims.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::from(*p).expect("finite parameter"))
                .collect(),
        }
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut offset = 0;
        for k in 0..l {
            offset += self.dims[k] * self.dims[k + 1] + self.dims[k + 1];
        }
        (offset, offset + self.dims[l] * self.dims[l + 1])
    }

    fn forward_tape(&self, x: &[T], dropout: Option<(&mut ChaCha8Rng, f64)>) -> Tape<T> {
        let layers = self.dims.len() - 1;
        let mut tape = Tape {
            layers: Vec::with_capacity(layers + 1),
            masks: Vec::new(),
        };
        let mut dropout = dropout.filter(|(_, rate)| *rate > 0.0);
        tape.layers.push(x.to_vec());
        for l in 0..layers {
            let (w_off, b_off) = self.layer_offsets(l);
            let (inp, out) = (self.dims[l], self.dims[l + 1]);
            let input = &tape.layers[l];
            let mut z = self.params[b_off..b_off + out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.params[w_off + o * inp..w_off + (o + 1) * inp];
                let mut acc = *zo;
                for (w, xi) in row.iter().zip(input) {
                    acc = acc + *w * *xi;
                }
                *zo = acc;
            }
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.max(T::zero());
                }
                if let Some((rng, rate)) = dropout.as_mut() {
                    let keep = cast::<T>(1.0 / (1.0 - *rate));
                    let mask: Vec<T> = (0..out)
                        .map(|_| if rng.random::<f64>() < *rate { T::zero() } else { keep })
                        .collect();
                    for (v, m) in z.iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    tape.masks.push(mask);
                }
            }
            tape.layers.push(z);
        }
        tape
    }

    /// Output logits for one input, dropout disabled.
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.forward_tape(x, None).layers.pop().expect("output layer")
    }

    /// Per-label probabilities for one embedding.
    pub fn predict(&self, embedding: &[T]) -> Result<Vec<T>> {
        if embedding.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding has {} dims, model expects {}",
                embedding.len(),
                self.input_dim()
            )));
        }
        Ok(self.logits(embedding).into_iter().map(sigmoid).collect())
    }

    /// Thresholded predictions; a probability of exactly 0.5 gives 1.
    pub fn predict_labels(&self, embedding: &[T]) -> Result<Vec<i32>> {
        Ok(self
            .predict(embedding)?
            .into_iter()
            .map(|p| i32::from(p >= cast(0.5)))
            .collect())
    }

    /// Mean weighted binary cross-entropy over the batch and labels, and its
    /// gradient with respect to every parameter.
    ///
    /// `targets` may be soft (any value in `[0, 1]`).
    pub fn loss_and_grad(
        &self,
        inputs: &[Vec<T>],
        targets: &[Vec<T>],
        pos_weight: &[T],
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> (T, Vec<T>) {
        let layers = self.dims.len() - 1;
        let labels = self.output_dim();
        let scale = T::one() / cast((inputs.len() * labels) as f64);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut loss = T::zero();
        for (x, y) in inputs.iter().zip(targets) {
            let tape = self.forward_tape(x, dropout.as_mut().map(|(r, rate)| (&mut **r, *rate)));
            let logits = &tape.layers[layers];
            // δ for the output layer.
            let mut delta: Vec<T> = Vec::with_capacity(labels);
            for j in 0..labels {
                let z = logits[j];
                let (w, t) = (pos_weight[j], y[j]);
                // -(w·t·log σ(z) + (1-t)·log(1-σ(z))), with log σ(z) = -softplus(-z).
                loss = loss + (w * t * softplus(-z) + (T::one() - t) * softplus(z)) * scale;
                let s = sigmoid(z);
                delta.push((w * t * (s - T::one()) + (T::one() - t) * s) * scale);
            }
            for l in (0..layers).rev() {
                let (w_off, b_off) = self.layer_offsets(l);
                let (inp, out) = (self.dims[l], self.dims[l + 1]);
                let input = &tape.layers[l];
                for o in 0..out {
                    let d = delta[o];
                    grad[b_off + o] = grad[b_off + o] + d;
                    if d != T::zero() {
                        let g_row = &mut grad[w_off + o * inp..w_off + (o + 1) * inp];
                        for (g, xi) in g_row.iter_mut().zip(input) {
                            *g = *g + d * *xi;
                        }
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![T::zero(); inp];
                for o in 0..out {
                    let d = delta[o];
                    if d == T::zero() {
                        continue;
                    }
                    let row = &self.params[w_off + o * inp..w_off + (o + 1) * inp];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p = *p + d * *w;
                    }
                }
                // Back through dropout and ReLU of layer l-1's output.
                let act = input;
                let mask = tape.masks.get(l - 1);
                for (i, p) in prev.iter_mut().enumerate() {
                    let m = mask.map_or(T::one(), |m| m[i]);
                    *p = if act[i] > T::zero() { *p * m } else { T::zero() };
                }
                delta = prev;
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, inputs: &[Vec<T>], targets: &[Vec<T>], pos_weight: &[T]) -> T {
        let labels = self.output_dim();
        let scale = T::one() / cast((inputs.len() * labels) as f64);
        let mut loss = T::zero();
        for (x, y) in inputs.iter().zip(targets) {
            let logits = self.logits(x);
            for j in 0..labels {
                let (w, t, z) = (pos_weight[j], y[j], logits[j]);
                loss = loss + (w * t * softplus(-z) + (T::one() - t) * softplus(z)) * scale;
            }
        }
        loss
    }
}

fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Float>(z: T) -> T {
    // log(1 + e^z), stable for large |z|.
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Positive-class weights `neg/pos` per label, clamped to
/// `[1/MAX_POS_WEIGHT, MAX_POS_WEIGHT]`; labels with no positives or no
/// negatives get weight 1.
pub fn positive_weights(targets: &[Vec<u8>], labels: usize) -> Vec<f64> {
    (0..labels)
        .map(|j| {
            let pos = targets.iter().filter(|t| t[j] == 1).count();
            let neg = targets.len() - pos;
            if pos == 0 || neg == 0 {
                1.0
            } else {
                (neg as f64 / pos as f64).clamp(1.0 / MAX_POS_WEIGHT, MAX_POS_WEIGHT)
            }
        })
        .collect()
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains a classifier on `embeddings` (N × d) against binary `targets`
/// (N × L). Deterministic for a given seed.
pub fn train<T: Float>(
    embeddings: &[Vec<T>],
    targets: &[Vec<u8>],
    cfg: &TrainingConfig,
) -> Result<(ClassifierModel<T>, TrainingLog)> {
    cfg.validate()?;
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty training set".into()));
    }
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} embeddings but {} target rows",
            targets.len()
        )));
    }
    let d = embeddings[0].len();
    let labels = targets[0].len();
    if d == 0 || labels == 0 {
        return Err(Error::ShapeMismatch("zero-width inputs or targets".into()));
    }
    if embeddings.iter().any(|e| e.len() != d) || targets.iter().any(|t| t.len() != labels) {
        return Err(Error::ShapeMismatch("ragged embeddings or targets".into()));
    }
    if embeddings.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::ShapeMismatch("non-finite embedding value".into()));
    }
    if targets.iter().flatten().any(|&t| t > 1) {
        return Err(Error::ShapeMismatch("targets must be 0 or 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = [d, cfg.hidden.0, cfg.hidden.1, labels];
    let mut model = ClassifierModel::<T>::init(&dims, &mut rng);
    let pos_weight: Vec<T> = positive_weights(targets, labels)
        .into_iter()
        .map(cast)
        .collect();
    let soft: Vec<Vec<T>> = targets
        .iter()
        .map(|row| row.iter().map(|&t| cast(t as f64)).collect())
        .collect();

    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = OneCycle::new(cfg.max_lr, cfg.epochs * batches_per_epoch);
    let mut opt = AdamW::new(model.params.len(), cfg.adam());
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<T>> = chunk.iter().map(|&i| embeddings[i].clone()).collect();
            let ys: Vec<Vec<T>> = chunk.iter().map(|&i| soft[i].clone()).collect();
            let (loss, grad) =
                model.loss_and_grad(&xs, &ys, &pos_weight, Some((&mut rng, cfg.dropout_rate)));
            let loss_f = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: loss_f,
                });
            }
            opt.step(&mut model.params, &grad, schedule.lr(step));
            epoch_loss += loss_f * chunk.len() as f64;
            step += 1;
        }
        log.epoch_losses.push(epoch_loss / n as f64);
    }
    log.steps = step;
    Ok((model, log))
}

/// Largest relative difference between analytic and central-difference
/// gradients over every parameter (dropout off, step `1e-5`).
///
/// The relative error of each parameter is `|a − n| / max(|a| + |n|, 1e-6)`;
/// the floor keeps parameters with vanishing gradients from dividing noise by
/// noise.
pub fn gradient_check(
    model: &ClassifierModel<f64>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    pos_weight: &[f64],
) -> f64 {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_grad(inputs, targets, pos_weight, None);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + STEP;
        let up = probe.loss(inputs, targets, pos_weight);
        probe.params[i] = orig - STEP;
        let down = probe.loss(inputs, targets, pos_weight);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// A trained classifier together with the embedding model and label order it
/// was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBundle {
    pub embedding_model: String,
    pub labels: Vec<String>,
    pub model: ClassifierModel<f32>,
    pub config: TrainingConfig,
}

impl ClassifierBundle {
    pub fn predict_values(&self, embedding: &[f32]) -> Result<BTreeMap<String, i32>> {
        let values = self.model.predict_labels(embedding)?;
        Ok(self.labels.iter().cloned().zip(values).collect())
    }
}
