use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{adam_step, grad, AdamConfig, AdamState, LossKind, SampleGroup};
use crate::channel::{noise_variance, transmit_block, ChannelModel};
use crate::error::{Error, Result};
use crate::modulation::{random_symbol_block, slice_hard, symbol_errors, Alphabet, Scheme};
use crate::rng::{self, stream};
use crate::unfolded::{forward, ChannelContext, Dims, Family, Hyper, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub family: Family,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub alphabet: Scheme,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Distinct channels per batch. `None` draws a fresh channel for
    /// every sample.
    #[serde(default)]
    pub channels_per_batch: Option<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub snr_range_db: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub hyper: Option<Hyper>,
    #[serde(default)]
    pub validation: Validation,
}

/// Held-out set used for model selection and early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    /// Iterations between validation passes.
    #[serde(default = "default_every")]
    pub every: usize,
    /// Received vectors, each with its own channel.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Stop after this many iterations without improvement.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
}

impl Default for Validation {
    fn default() -> Self {
        Self {
            every: default_every(),
            samples: default_samples(),
            patience: default_patience(),
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    1000
}
fn default_iterations() -> usize {
    50_000
}
fn default_every() -> usize {
    100
}
fn default_samples() -> usize {
    1000
}
fn default_patience() -> Option<usize> {
    Some(2000)
}

impl TrainConfig {
    pub fn new(family: Family, users: usize, antennas: usize, layers: usize, alphabet: Scheme, snr_range_db: [f64; 2]) -> Self {
        Self {
            family,
            users,
            antennas,
            layers,
            alphabet,
            channel: ChannelModel::default(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            channels_per_batch: None,
            iterations: default_iterations(),
            snr_range_db,
            seed: 0,
            loss: None,
            hyper: None,
            validation: Validation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.family == Family::MmNet {
            return bad("MMNet is trained online per channel; use train_online_mmnet".into());
        }
        if self.users == 0 || self.antennas == 0 {
            return bad(format!("need K, N >= 1, got K={}, N={}", self.users, self.antennas));
        }
        if self.layers < 2 {
            return bad(format!("the layer-weighted loss needs L >= 2, got {}", self.layers));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.channels_per_batch {
            if c == 0 || c > self.batch_size {
                return bad(format!("channels_per_batch must lie in 1..={}, got {c}", self.batch_size));
            }
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("invalid snr_range_db [{lo}, {hi}]"));
        }
        if self.validation.every == 0 || self.validation.samples == 0 {
            return bad("validation.every and validation.samples must be >= 1".into());
        }
        self.channel.validate()
    }

    fn dims(&self) -> Dims {
        Dims::new(self.users, self.antennas, self.layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Training batch loss before this iteration's update.
    pub loss: f64,
    /// Validation SER after the update, on validation iterations.
    pub val_ser: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation score (possibly the
    /// initialization).
    pub params: ModelParams,
    pub curve: Vec<CurvePoint>,
    pub initial_val_ser: f64,
    pub initial_val_loss: f64,
    pub best_val_ser: f64,
    pub best_val_loss: f64,
    /// Zero when no update improved on the initialization.
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub elapsed_seconds: f64,
}

impl TrainOutcome {
    /// Whether training improved on the initialization at all.
    pub fn converged(&self) -> bool {
        self.best_iteration > 0
    }
}

/// Draws the batch of one training iteration.
pub(crate) fn training_batch(cfg: &TrainConfig, iteration: usize) -> Result<Vec<SampleGroup>> {
    let alphabet = Alphabet::new(cfg.alphabet);
    let mut r = rng::child_rng(cfg.seed, &[stream::TRAIN, iteration as u64]);
    let [lo, hi] = cfg.snr_range_db;
    let snr = if hi > lo { r.random_range(lo..=hi) } else { lo };
    let sigma2 = noise_variance(cfg.users, snr);
    let channels = cfg.channels_per_batch.unwrap_or(cfg.batch_size);
    let (base, extra) = (cfg.batch_size / channels, cfg.batch_size % channels);
    (0..channels)
        .map(|c| {
            let cols = base + usize::from(c < extra);
            let seed = rng::derive_seed(cfg.seed, &[stream::CHANNEL, iteration as u64, c as u64]);
            let h = cfg.channel.sample(cfg.users, cfg.antennas, seed)?.into_entries();
            let x = random_symbol_block(&alphabet, 2 * cfg.users, cols, &mut r);
            let y = transmit_block(&h, &x, sigma2, &mut r);
            SampleGroup::new(Arc::new(ChannelContext::new(h)), y, x, sigma2)
        })
        .collect()
}

/// Fixed validation set: one channel per vector, SNR spread evenly over the
/// training range.
fn validation_set(cfg: &TrainConfig) -> Result<Vec<SampleGroup>> {
    let alphabet = Alphabet::new(cfg.alphabet);
    let mut r = rng::child_rng(cfg.seed, &[stream::VALIDATION]);
    let [lo, hi] = cfg.snr_range_db;
    let n = cfg.validation.samples;
    (0..n)
        .map(|i| {
            let snr = if n > 1 { lo + (hi - lo) * i as f64 / (n - 1) as f64 } else { 0.5 * (lo + hi) };
            let sigma2 = noise_variance(cfg.users, snr);
            let seed = rng::derive_seed(cfg.seed, &[stream::VALIDATION, stream::CHANNEL, i as u64]);
            let h = cfg.channel.sample(cfg.users, cfg.antennas, seed)?.into_entries();
            let x = random_symbol_block(&alphabet, 2 * cfg.users, 1, &mut r);
            let y = transmit_block(&h, &x, sigma2, &mut r);
            SampleGroup::new(Arc::new(ChannelContext::new(h)), y, x, sigma2)
        })
        .collect()
}

/// Mean loss and SER over `groups`.
pub(crate) fn evaluate(model: &ModelParams, groups: &[SampleGroup], loss: LossKind) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut errors = 0;
    let mut samples = 0;
    for g in groups {
        let trace = forward(model, &g.ctx, &g.y, g.sigma2)?;
        total += super::loss_value(&trace, &g.x, loss)? * g.len() as f64;
        for j in 0..g.len() {
            let decision = slice_hard(&trace.estimate().column(j).into_owned(), model.alphabet())?;
            errors += symbol_errors(&decision, &g.x.column(j).into_owned(), model.alphabet())?;
        }
        samples += g.len();
    }
    let symbols = samples * model.dims().users;
    Ok((total / samples as f64, errors as f64 / symbols as f64))
}

fn diverged(e: Error, iteration: usize, curve: &[CurvePoint]) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            iteration,
            losses: curve.iter().map(|p| p.loss).collect(),
        },
        other => other,
    }
}

/// Trains a network over the configured channel distribution with Adam.
///
/// Every iteration draws a fresh batch. Validation runs every
/// `validation.every` iterations; the returned parameters are the ones
/// with the lowest validation SER (ties broken by validation loss).
pub fn train_offline(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let dims = cfg.dims();
    let mut model = match cfg.hyper {
        Some(h) => ModelParams::init_with(cfg.family, dims, cfg.alphabet, h, cfg.seed, None)?,
        None => ModelParams::init(cfg.family, dims, cfg.alphabet, cfg.seed, None)?,
    };
    let loss = cfg.loss.unwrap_or(LossKind::default_for(cfg.family));
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(model.tensors());
    let validation = validation_set(cfg)?;
    let (initial_val_loss, initial_val_ser) = evaluate(&model, &validation, loss)?;
    let mut best = (initial_val_ser, initial_val_loss, 0usize, model.clone());
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut stopped_early = false;
    for it in 1..=cfg.iterations {
        let batch = training_batch(cfg, it)?;
        let g = grad(&model, &batch, loss).map_err(|e| diverged(e, it, &curve))?;
        adam_step(model.tensors_mut(), &g.grads, &mut state, &adam)?;
        let mut point = CurvePoint {
            iteration: it,
            loss: g.loss,
            val_ser: None,
            val_loss: None,
        };
        if !model.is_finite() {
            curve.push(point);
            return Err(diverged(Error::NonFinite("parameters".into()), it, &curve));
        }
        if it % cfg.validation.every == 0 || it == cfg.iterations {
            let (vl, vs) = evaluate(&model, &validation, loss).map_err(|e| diverged(e, it, &curve))?;
            point.val_ser = Some(vs);
            point.val_loss = Some(vl);
            if (vs, vl) < (best.0, best.1) {
                best = (vs, vl, it, model.clone());
            }
        }
        curve.push(point);
        if let Some(p) = cfg.validation.patience {
            if it - best.2 >= p {
                stopped_early = it < cfg.iterations;
                break;
            }
        }
    }
    let iterations_run = curve.len();
    Ok(TrainOutcome {
        params: best.3,
        curve,
        initial_val_ser,
        initial_val_loss,
        best_val_ser: best.0,
        best_val_loss: best.1,
        best_iteration: best.2,
        iterations_run,
        stopped_early,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Writes the loss curve as CSV with columns `iteration, loss, val_ser`.
pub fn write_curve_csv(curve: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    w.write_record(["iteration", "loss", "val_ser"])?;
    for p in curve {
        let val = p.val_ser.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.iteration.to_string(), p.loss.to_string(), val])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
