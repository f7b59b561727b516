use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{adam_step, grad, AdamConfig, AdamState, LossKind, SampleGroup};
use crate::channel::{noise_variance, transmit_block, ChannelMatrix};
use crate::error::{Error, Result};
use crate::modulation::{random_symbol_block, Alphabet, Scheme};
use crate::rng::{self, stream};
use crate::unfolded::{ChannelContext, Dims, Family, ModelParams};

/// Settings for per-channel MMNet training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    #[serde(rename = "L")]
    pub layers: usize,
    pub alphabet: Scheme,
    pub snr_db: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: Option<LossKind>,
}

fn default_batch() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}

impl OnlineConfig {
    pub fn new(layers: usize, alphabet: Scheme, snr_db: f64) -> Self {
        Self {
            layers,
            alphabet,
            snr_db,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
            loss: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::InvalidArgument(format!("MMNet needs L >= 2, got {}", self.layers)));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.snr_db.is_nan() {
            return Err(Error::InvalidArgument(format!("invalid online training settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub params: ModelParams,
    /// Batch loss of every epoch.
    pub losses: Vec<f64>,
    pub training_seconds: f64,
}

/// Trains unconstrained MMNet for one fixed channel. One epoch is one Adam
/// step on a fresh batch of symbols and noise.
pub fn train_online_mmnet(h: &ChannelMatrix, cfg: &OnlineConfig, epochs: usize) -> Result<OnlineOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let dims = Dims::new(h.users(), h.antennas(), cfg.layers);
    let mut model = ModelParams::init(Family::MmNet, dims, cfg.alphabet, cfg.seed, Some(h.entries()))?;
    let loss = cfg.loss.unwrap_or(LossKind::Weighted);
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(model.tensors());
    let alphabet = Alphabet::new(cfg.alphabet);
    let ctx = Arc::new(ChannelContext::new(h.entries().clone()));
    let sigma2 = noise_variance(h.users(), cfg.snr_db);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut r = rng::child_rng(cfg.seed, &[stream::TRAIN, epoch as u64]);
        let x = random_symbol_block(&alphabet, h.k_r(), cfg.batch_size, &mut r);
        let y = transmit_block(h.entries(), &x, sigma2, &mut r);
        let group = SampleGroup::new(ctx.clone(), y, x, sigma2)?;
        let g = grad(&model, std::slice::from_ref(&group), loss).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                iteration: epoch + 1,
                losses: losses.clone(),
            },
            other => other,
        })?;
        losses.push(g.loss);
        adam_step(model.tensors_mut(), &g.grads, &mut state, &adam)?;
        if !model.is_finite() {
            return Err(Error::Diverged {
                iteration: epoch + 1,
                losses,
            });
        }
    }
    Ok(OnlineOutcome {
        params: model,
        losses,
        training_seconds: start.elapsed().as_secs_f64(),
    })
}
