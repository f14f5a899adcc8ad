//! NCE training with the diversity-augmented objective
//! `L_aug = L − β Σ_x Σ_{i≠j} (φᵢ(x) − φⱼ(x))²`.
//!
//! The NCE loss ranks each true target against `M` samples from a noise
//! mixture centered at that target,
//! `q(y | yᵢ) = ½ N(y; yᵢ, σ₁²) + ½ N(y; yᵢ, σ₂²)`, using the scores
//! `−E(x, y) − log q(y | yᵢ)`:
//!
//! ```text
//! Lᵢ = −log softmax(s)₀,   s_k = −E(x, y_k) − log q(y_k | yᵢ),   y₀ = yᵢ
//! ```

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, RunConfig};
use crate::diversity::{diversity_penalty, diversity_penalty_grad, FeatureBatch};
use crate::energy::EbmModel;
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, AdamConfig, AdamState, Matrix};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NceConfig {
    pub sigma1: f64,
    pub sigma2: f64,
    /// M, noise samples per example.
    pub m_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self::with_sigma1(0.1)
    }
}

impl NceConfig {
    /// Defaults with `σ₂ = 8σ₁`.
    pub fn with_sigma1(sigma1: f64) -> Self {
        NceConfig {
            sigma1,
            sigma2: 8.0 * sigma1,
            m_samples: 1024,
            batch_size: 32,
            epochs: 75,
            lr: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::Config("noise scales must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Which x-branch activations the diversity penalty acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTap {
    /// The x-branch output Φ(x).
    Output,
    /// Post-activation output of hidden layer `k` (0-based).
    Hidden(usize),
}

impl FeatureTap {
    /// Layer index inside the x-branch network.
    pub fn layer(self, n_layers: usize) -> Result<usize> {
        match self {
            FeatureTap::Output => Ok(n_layers - 1),
            FeatureTap::Hidden(k) if k + 1 < n_layers => Ok(k),
            FeatureTap::Hidden(k) => Err(Error::Config(format!(
                "x-branch has no hidden layer {k}"
            ))),
        }
    }
}

impl fmt::Display for FeatureTap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureTap::Output => f.write_str("output"),
            FeatureTap::Hidden(k) => write!(f, "hidden{k}"),
        }
    }
}

impl FromStr for FeatureTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "output" {
            return Ok(FeatureTap::Output);
        }
        s.strip_prefix("hidden")
            .and_then(|k| k.parse().ok())
            .map(FeatureTap::Hidden)
            .ok_or_else(|| Error::Config(format!("unknown feature tap `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub beta: f64,
    pub feature_tap: FeatureTap,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            beta: 0.0,
            feature_tap: FeatureTap::Output,
        }
    }
}

/// `log q(y | center)` for the two-component noise mixture.
pub fn noise_logpdf(cfg: &NceConfig, y: f64, center: f64) -> f64 {
    let d = y - center;
    let log_normal = |s: f64| -0.5 * (d / s) * (d / s) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let (a, b) = (log_normal(cfg.sigma1), log_normal(cfg.sigma2));
    let m = a.max(b);
    m + (0.5 * (a - m).exp() + 0.5 * (b - m).exp()).ln()
}

/// `M` noise samples per center, one row per center.
pub fn draw_noise<R: Rng + ?Sized>(cfg: &NceConfig, centers: &[f64], rng: &mut R) -> Matrix {
    let m = cfg.m_samples;
    let mut out = Matrix::zeros(centers.len(), m);
    for (i, &c) in centers.iter().enumerate() {
        for slot in out.row_mut(i) {
            let sd = if rng.random_bool(0.5) {
                cfg.sigma1
            } else {
                cfg.sigma2
            };
            let z: f64 = rng.sample(StandardNormal);
            *slot = c + sd * z;
        }
    }
    out
}

/// Value and parameter gradient of a training objective on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    /// Mean NCE loss over the batch.
    pub nce: f64,
    /// Diversity penalty of the batch features (before scaling by β).
    pub penalty: f64,
    /// `nce − β · penalty`.
    pub total: f64,
    pub grads: Vec<f64>,
}

/// Mean NCE loss over the batch `(x, y)` with explicit noise samples
/// (`noise` is `batch × M`).
pub fn nce_loss(
    model: &EbmModel,
    cfg: &NceConfig,
    x: &Matrix,
    y: &[f64],
    noise: &Matrix,
) -> Result<Objective> {
    augmented_loss(model, cfg, &RegularizerConfig::default(), x, y, noise)
}

/// NCE loss minus `β` times the diversity penalty of the tapped features.
pub fn augmented_loss(
    model: &EbmModel,
    cfg: &NceConfig,
    reg: &RegularizerConfig,
    x: &Matrix,
    y: &[f64],
    noise: &Matrix,
) -> Result<Objective> {
    let b = x.rows();
    if y.len() != b || noise.rows() != b {
        return Err(Error::Dimension(format!(
            "batch of {b} inputs with {} targets and {} noise rows",
            y.len(),
            noise.rows()
        )));
    }
    if b == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if !(reg.beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {}", reg.beta)));
    }
    let m = noise.cols();
    let k = m + 1;
    let mut rows = Vec::with_capacity(b * k);
    let mut ys = Vec::with_capacity(b * k);
    for i in 0..b {
        rows.extend(std::iter::repeat_n(i, k));
        ys.push(y[i]);
        ys.extend_from_slice(noise.row(i));
    }
    let pass = model.forward_pairs(x, &rows, &ys)?;

    let mut d_energy = vec![0.0; b * k];
    let mut scores = vec![0.0; k];
    let mut loss = 0.0;
    for i in 0..b {
        let block = i * k..(i + 1) * k;
        for (s, (&e, &yk)) in scores
            .iter_mut()
            .zip(pass.energies[block.clone()].iter().zip(&ys[block.clone()]))
        {
            *s = -e - noise_logpdf(cfg, yk, y[i]);
        }
        let max = scores.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s));
        let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - scores[0];
        for (j, (de, s)) in d_energy[block].iter_mut().zip(&scores).enumerate() {
            let p = (s - lse).exp();
            let delta = if j == 0 { 1.0 } else { 0.0 };
            *de = (delta - p) / b as f64;
        }
    }
    let nce = loss / b as f64;

    let tap_layer = reg.feature_tap.layer(model.features.layers().len())?;
    let tapped = FeatureBatch::new(pass.x_layer_output(tap_layer).clone())?;
    let penalty = diversity_penalty(&tapped);
    let grads = if reg.beta > 0.0 {
        let mut tap_grad = diversity_penalty_grad(&tapped);
        for v in tap_grad.data_mut() {
            *v *= -reg.beta;
        }
        model.backward_pairs(&pass, &d_energy, &[(tap_layer, &tap_grad)])?
    } else {
        model.backward_pairs(&pass, &d_energy, &[])?
    };
    let total = nce - reg.beta * penalty;
    if !nce.is_finite() || !total.is_finite() {
        return Err(Error::NonFinite(format!("objective {total}")));
    }
    Ok(Objective {
        nce,
        penalty,
        total,
        grads: grads.params,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub nce: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub seed: u64,
    /// NCE loss of the initial model on the full training set.
    pub initial_loss: f64,
    /// Batch-size weighted means over each epoch.
    pub epochs: Vec<EpochStats>,
    pub model: EbmModel,
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.nce)
    }
}

/// Freshly initialized model for a run.
pub fn init_model(run: &RunConfig) -> EbmModel {
    let mut rng = rng_from_seed(run.seed, STREAM_INIT);
    EbmModel::new(run.energy, &run.architecture(), &mut rng)
}

/// Trains the model described by `run` on `data`. Fully determined by
/// `run.seed`: initialization, shuffles and noise use separate streams.
pub fn train(run: &RunConfig, data: &Dataset) -> Result<TrainReport> {
    run.nce.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if run.energy == crate::energy::EnergyKind::BinaryClassification {
        return Err(Error::Config(
            "NCE with Gaussian noise needs a continuous target; classification cannot be trained this way"
                .into(),
        ));
    }
    let start = Instant::now();
    let mut model = init_model(run);
    let x = data.x_matrix();
    let initial_loss = mean_nce(&model, &run.nce, &x, &data.y, run.seed)?;

    let mut params = model.flatten();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_lr(run.nce.lr));
    let mut shuffle_rng = rng_from_seed(run.seed, STREAM_SHUFFLE);
    let mut noise_rng = rng_from_seed(run.seed, STREAM_NOISE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(run.nce.epochs);

    for epoch in 0..run.nce.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochStats {
            nce: 0.0,
            penalty: 0.0,
            total: 0.0,
        };
        for (bi, idx) in order.chunks(run.nce.batch_size).enumerate() {
            let xb = x.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            let noise = draw_noise(&run.nce, &yb, &mut noise_rng);
            let diverged = |loss: f64| Error::Diverged {
                epoch,
                batch: bi,
                loss,
            };
            let obj = match augmented_loss(&model, &run.nce, &run.reg, &xb, &yb, &noise) {
                Ok(o) => o,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            if !obj.total.is_finite() {
                return Err(diverged(obj.total));
            }
            adam.step(&mut params, &obj.grads)
                .map_err(|_| diverged(obj.total))?;
            model.assign_flat(&params)?;
            let w = idx.len() as f64 / data.len() as f64;
            acc.nce += w * obj.nce;
            acc.penalty += w * obj.penalty;
            acc.total += w * obj.total;
        }
        epochs.push(acc);
    }

    Ok(TrainReport {
        seed: run.seed,
        initial_loss,
        epochs,
        model,
        wall_time: start.elapsed(),
    })
}

/// NCE loss over a whole set, with noise from the evaluation stream of
/// `seed`, so two models scored with the same seed see the same noise.
pub fn mean_nce(model: &EbmModel, cfg: &NceConfig, x: &Matrix, y: &[f64], seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed, STREAM_EVAL);
    let idx: Vec<usize> = (0..y.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let xb = x.select_rows(chunk);
        let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
        let noise = draw_noise(cfg, &yb, &mut rng);
        let obj = nce_loss(model, cfg, &xb, &yb, &noise)?;
        total += obj.nce * chunk.len() as f64;
    }
    Ok(total / y.len() as f64)
}
