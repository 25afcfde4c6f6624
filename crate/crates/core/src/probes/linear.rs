//! Linear probe: a single softmax layer trained with minibatch Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Z-score features with training-set statistics before fitting.
    pub standardize: bool,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(s: &Samples) -> Self {
        let d = s.dim;
        let n = s.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in s.rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in s.rows() {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(acc, (v, m))| *acc += (v - m) * (v - m) / n);
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect()
    }

    fn apply(&self, s: &Samples) -> Samples {
        Samples {
            x: s.rows().flat_map(|r| self.apply_row(r)).collect(),
            y: s.y.clone(),
            dim: s.dim,
        }
    }
}

/// Trained softmax layer with its per-epoch loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// C×D, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
    pub training_log: Vec<LpEpoch>,
    /// Epoch (0-based) whose weights were kept: the lowest validation loss.
    pub selected_epoch: usize,
    standardizer: Option<Standardizer>,
}

impl LinearProbe {
    /// A probe with fixed parameters and no training history.
    pub fn from_parameters(weights: Vec<f64>, bias: Vec<f64>, dim: usize) -> Result<Self> {
        let c = bias.len();
        if weights.len() != c * dim {
            return Err(Error::Shape {
                expected: c * dim,
                got: weights.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            n_classes: c,
            dim,
            training_log: Vec::new(),
            selected_epoch: 0,
            standardizer: None,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: x.len(),
            });
        }
        let owned;
        let x = match &self.standardizer {
            Some(s) => {
                owned = s.apply_row(x);
                &owned[..]
            }
            None => x,
        };
        let mut z = vec![0.0; self.n_classes];
        logits_into(&self.weights, &self.bias, self.dim, x, &mut z);
        Ok(z)
    }
}

fn logits_into(w: &[f64], b: &[f64], d: usize, x: &[f64], out: &mut [f64]) {
    for (k, z) in out.iter_mut().enumerate() {
        let wk = &w[k * d..(k + 1) * d];
        *z = b[k] + wk.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy over `rows` of `data`. When gradients are requested
/// they are written (averaged) into `gw`/`gb`.
fn loss_and_grad(
    w: &[f64],
    b: &[f64],
    data: &Samples,
    rows: &[usize],
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let c = b.len();
    let d = data.dim;
    if let Some((gw, gb)) = grads.as_mut() {
        gw.fill(0.0);
        gb.fill(0.0);
    }
    let inv_n = 1.0 / rows.len() as f64;
    let mut z = vec![0.0; c];
    let mut loss = 0.0;
    for &i in rows {
        let x = data.row(i);
        let y = data.y[i] as usize;
        logits_into(w, b, d, x, &mut z);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        if let Some((gw, gb)) = grads.as_mut() {
            for k in 0..c {
                let p = (z[k] - lse).exp();
                let delta = (p - if k == y { 1.0 } else { 0.0 }) * inv_n;
                gb[k] += delta;
                gw[k * d..(k + 1) * d]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(g, v)| *g += delta * v);
            }
        }
    }
    loss * inv_n
}

/// Mean softmax cross-entropy of `batch` and its gradient with respect to
/// the C×D `weights` and the C `bias`.
pub fn cross_entropy_grad(
    weights: &[f64],
    bias: &[f64],
    batch: &Samples,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let c = bias.len();
    if weights.len() != c * batch.dim {
        return Err(Error::Shape {
            expected: c * batch.dim,
            got: weights.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::Task("empty batch".into()));
    }
    check_labels(batch, c)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; c];
    let loss = loss_and_grad(weights, bias, batch, &rows, Some((&mut gw, &mut gb)));
    Ok((loss, gw, gb))
}

fn check_labels(s: &Samples, c: usize) -> Result<()> {
    match s.y.iter().find(|&&y| y as usize >= c) {
        Some(y) => Err(Error::Task(format!("label {y} outside [0, {c})"))),
        None => Ok(()),
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &LpConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a softmax layer on `train`, keeping the weights of the epoch with
/// the lowest loss on `val`.
///
/// The class count is `max label + 1` over both sets. Weights start at zero
/// and the only randomness is the per-epoch shuffle drawn from `seed`. The
/// last partial batch is kept.
pub fn lp_train(train: &Samples, val: &Samples, cfg: &LpConfig, seed: u64) -> Result<LinearProbe> {
    if cfg.epochs == 0 {
        return Err(Error::Parameter("linear probe needs at least one epoch".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Parameter("learning rate must be positive".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Task("linear probe needs non-empty train and validation sets".into()));
    }
    if val.dim != train.dim {
        return Err(Error::Shape {
            expected: train.dim,
            got: val.dim,
        });
    }
    let c = train.y.iter().chain(&val.y).copied().max().unwrap() as usize + 1;
    if c < 2 {
        return Err(Error::Task("linear probe needs at least two classes".into()));
    }

    let standardizer = cfg.standardize.then(|| Standardizer::fit(train));
    let (train_s, val_s);
    let (train, val) = match &standardizer {
        Some(s) => {
            train_s = s.apply(train);
            val_s = s.apply(val);
            (&train_s, &val_s)
        }
        None => (train, val),
    };

    let d = train.dim;
    let mut w = vec![0.0; c * d];
    let mut b = vec![0.0; c];
    let mut gw = vec![0.0; c * d];
    let mut gb = vec![0.0; c];
    let mut opt_w = Adam::new(w.len());
    let mut opt_b = Adam::new(b.len());

    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let all_train: Vec<usize> = (0..train.len()).collect();
    let all_val: Vec<usize> = (0..val.len()).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let loss = loss_and_grad(&w, &b, train, rows, Some((&mut gw, &mut gb)));
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            opt_w.step(&mut w, &gw, cfg);
            opt_b.step(&mut b, &gb, cfg);
        }
        let train_loss = loss_and_grad(&w, &b, train, &all_train, None);
        let val_loss = loss_and_grad(&w, &b, val, &all_val, None);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        log.push(LpEpoch {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(l, ..)| val_loss < *l) {
            best = Some((val_loss, epoch, w.clone(), b.clone()));
        }
    }
    let (_, selected_epoch, weights, bias) = best.expect("at least one epoch");
    Ok(LinearProbe {
        weights,
        bias,
        n_classes: c,
        dim: d,
        training_log: log,
        selected_epoch,
        standardizer,
    })
}

/// Class with the largest logit; the lowest class index wins ties.
pub fn lp_predict(probe: &LinearProbe, x: &[f64]) -> Result<u32> {
    let z = probe.logits(x)?;
    let mut best = 0;
    for k in 1..z.len() {
        if z[k] > z[best] {
            best = k;
        }
    }
    Ok(best as u32)
}
