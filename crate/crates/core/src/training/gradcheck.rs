//! Central finite-difference audit of the reverse-mode gradients.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{grad, LossKind, SampleGroup};
use crate::autodiff::{Backend, Tape};
use crate::channel::{noise_variance, transmit_block, ChannelModel};
use crate::error::{Error, Result};
use crate::modulation::{random_symbol_block, Alphabet, Scheme};
use crate::rng;
use crate::unfolded::{bind_params, run, ChannelContext, Dims, Family, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub family: Family,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(default = "default_scheme")]
    pub alphabet: Scheme,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Fresh test points to try when a perturbation crosses a kink.
    #[serde(default = "default_attempts")]
    pub attempts: usize,
}

fn default_scheme() -> Scheme {
    Scheme::Qpsk
}
fn default_batch() -> usize {
    2
}
fn default_snr() -> f64 {
    10.0
}
fn default_step() -> f64 {
    1e-5
}
fn default_floor() -> f64 {
    1e-4
}
fn default_attempts() -> usize {
    20
}

impl GradcheckConfig {
    pub fn new(family: Family, users: usize, antennas: usize, layers: usize) -> Self {
        Self {
            family,
            users,
            antennas,
            layers,
            alphabet: default_scheme(),
            batch: default_batch(),
            snr_db: default_snr(),
            seed: 0,
            step: default_step(),
            floor: default_floor(),
            attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub family: Family,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: GradcheckEntry,
    /// Test points discarded because a perturbation crossed a kink.
    pub resampled: usize,
}

struct TestPoint {
    model: ModelParams,
    groups: Vec<SampleGroup>,
}

fn test_point(cfg: &GradcheckConfig, attempt: usize) -> Result<TestPoint> {
    let seed = rng::derive_seed(cfg.seed, &[attempt as u64]);
    let dims = Dims::new(cfg.users, cfg.antennas, cfg.layers);
    let alphabet = Alphabet::new(cfg.alphabet);
    let sigma2 = noise_variance(cfg.users, cfg.snr_db);
    let mut r = rng::child_rng(seed, &[rng::stream::SYMBOLS]);
    // MMNet is trained per channel, so its batch shares one channel.
    let shared = cfg.family == Family::MmNet;
    let channel = |i: usize| ChannelModel::IidRayleigh.sample(cfg.users, cfg.antennas, rng::derive_seed(seed, &[rng::stream::CHANNEL, i as u64]));
    let mut groups = Vec::new();
    if shared {
        let h = channel(0)?.into_entries();
        let x = random_symbol_block(&alphabet, dims.k_r(), cfg.batch, &mut r);
        let y = transmit_block(&h, &x, sigma2, &mut r);
        groups.push(SampleGroup::new(Arc::new(ChannelContext::new(h)), y, x, sigma2)?);
    } else {
        for i in 0..cfg.batch {
            let h = channel(i)?.into_entries();
            let x = random_symbol_block(&alphabet, dims.k_r(), 1, &mut r);
            let y = transmit_block(&h, &x, sigma2, &mut r);
            groups.push(SampleGroup::new(Arc::new(ChannelContext::new(h)), y, x, sigma2)?);
        }
    }
    let mut model = ModelParams::init(cfg.family, dims, cfg.alphabet, seed, Some(groups[0].ctx.h()))?;
    // Move away from the structured initialization so no parameter sits at
    // a special value.
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = *v * (1.0 + 0.1 * noise.sample(&mut r)) + 0.01 * noise.sample(&mut r);
        }
    }
    Ok(TestPoint { model, groups })
}

/// Mean loss and the concatenated kink signatures of every group.
fn probe(model: &ModelParams, groups: &[SampleGroup], loss: LossKind) -> Result<(f64, Vec<u32>)> {
    let mut total = 0.0;
    let mut count = 0;
    let mut sig = Vec::new();
    for g in groups {
        let mut tape = Tape::new();
        let params = bind_params(&mut tape, model);
        let layers = run(&mut tape, model, &params, &g.ctx, &g.y, g.sigma2)?;
        let l = super::loss::loss_graph(&mut tape, &layers.x_hat, &g.x, loss)?;
        total += tape.value(&l)[(0, 0)];
        count += g.len();
        sig.extend(tape.kink_signature());
    }
    Ok((total / count as f64, sig))
}

enum Outcome {
    Done(Vec<GradcheckEntry>),
    Crossed,
}

fn check_point(point: &TestPoint, cfg: &GradcheckConfig, loss: LossKind) -> Result<Outcome> {
    let analytic = grad(&point.model, &point.groups, loss)?;
    let (_, base_sig) = probe(&point.model, &point.groups, loss)?;
    let specs = point.model.specs();
    let mut model = point.model.clone();
    let mut entries = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        for col in 0..spec.cols {
            for row in 0..spec.rows {
                let orig = model.tensors()[k][(row, col)];
                model.tensors_mut()[k][(row, col)] = orig + cfg.step;
                let (plus, sig_plus) = probe(&model, &point.groups, loss)?;
                model.tensors_mut()[k][(row, col)] = orig - cfg.step;
                let (minus, sig_minus) = probe(&model, &point.groups, loss)?;
                model.tensors_mut()[k][(row, col)] = orig;
                if sig_plus != base_sig || sig_minus != base_sig {
                    return Ok(Outcome::Crossed);
                }
                let numeric = (plus - minus) / (2.0 * cfg.step);
                let a = analytic.grads[k][(row, col)];
                let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
                entries.push(GradcheckEntry {
                    name: spec.name.clone(),
                    row,
                    col,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(Outcome::Done(entries))
}

/// Compares every parameter's reverse-mode derivative of the mean batch
/// loss with a central difference. Test points where a perturbation would
/// cross a ReLU, clamp, or quantizer kink are redrawn.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0 && cfg.floor > 0.0) || cfg.batch == 0 || cfg.attempts == 0 {
        return Err(Error::InvalidArgument(format!("invalid gradcheck settings: {cfg:?}")));
    }
    let loss = LossKind::default_for(cfg.family);
    for attempt in 0..cfg.attempts {
        let point = test_point(cfg, attempt)?;
        if let Outcome::Done(entries) = check_point(&point, cfg, loss)? {
            let worst = entries
                .iter()
                .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("model has no parameters".into()))?;
            return Ok(GradcheckReport {
                family: cfg.family,
                checked: entries.len(),
                max_rel_error: worst.rel_error,
                worst,
                resampled: attempt,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "every one of {} test points had a perturbation crossing a kink",
        cfg.attempts
    )))
}

