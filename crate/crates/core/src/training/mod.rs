//! Losses, reverse-mode gradients, Adam, and the offline and online
//! training loops.

mod adam;
mod gradcheck;
mod loss;
mod offline;
mod online;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckEntry, GradcheckReport};
pub use loss::{detnet_loss, fsnet_loss, loss_value, LossKind};
pub use offline::{train_offline, write_curve_csv, CurvePoint, TrainConfig, TrainOutcome, Validation};
pub use online::{train_online_mmnet, OnlineConfig, OnlineOutcome};

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::unfolded::{bind_params, run, ChannelContext, ModelParams};

/// Received vectors sharing one channel: columns of `y` and `x`.
#[derive(Debug, Clone)]
pub struct SampleGroup {
    pub ctx: Arc<ChannelContext>,
    pub y: Matrix,
    pub x: Matrix,
    pub sigma2: f64,
}

impl SampleGroup {
    pub fn new(ctx: Arc<ChannelContext>, y: Matrix, x: Matrix, sigma2: f64) -> Result<Self> {
        let (n_r, k_r) = ctx.h().shape();
        if y.nrows() != n_r || x.nrows() != k_r || y.ncols() != x.ncols() || y.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "sample group with H {}x{}, y {:?}, x {:?}",
                n_r,
                k_r,
                y.shape(),
                x.shape()
            )));
        }
        Ok(Self { ctx, y, x, sigma2 })
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }
}

/// Mean batch loss and its gradient, one matrix per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    pub samples: usize,
}

impl GradientRecord {
    pub fn max_abs(&self) -> f64 {
        self.grads.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }
}

/// Summed loss over the group's columns and its parameter gradients,
/// scaled by `weight`.
fn group_gradient(model: &ModelParams, g: &SampleGroup, loss: LossKind, weight: f64) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let params = bind_params(&mut tape, model);
    let layers = run(&mut tape, model, &params, &g.ctx, &g.y, g.sigma2)?;
    let total = loss::loss_graph(&mut tape, &layers.x_hat, &g.x, loss)?;
    let value = crate::autodiff::Backend::value(&tape, &total)[(0, 0)];
    tape.backward(total, weight);
    let grads = params
        .iter()
        .zip(model.tensors())
        .map(|(p, t)| tape.grad(*p).cloned().unwrap_or_else(|| Matrix::zeros(t.nrows(), t.ncols())))
        .collect();
    Ok((value, grads))
}

/// Exact gradient of the mean per-sample loss over all groups.
///
/// Groups are processed in parallel and reduced in input order, so the
/// result does not depend on the thread count.
pub fn grad(model: &ModelParams, groups: &[SampleGroup], loss: LossKind) -> Result<GradientRecord> {
    let samples: usize = groups.iter().map(SampleGroup::len).sum();
    if samples == 0 {
        return Err(Error::InvalidArgument("gradient needs at least one sample".into()));
    }
    let weight = 1.0 / samples as f64;
    let parts: Vec<(f64, Vec<Matrix>)> = groups
        .par_iter()
        .map(|g| group_gradient(model, g, loss, weight))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Matrix> = model.tensors().iter().map(|t| Matrix::zeros(t.nrows(), t.ncols())).collect();
    for (value, part) in parts {
        total += value;
        for (acc, g) in grads.iter_mut().zip(part) {
            *acc += g;
        }
    }
    let loss_value = total * weight;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    for (spec, g) in model.specs().iter().zip(&grads) {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % g.nrows(), pos / g.nrows());
            return Err(Error::NonFinite(format!("gradient of {}[{i}, {j}]", spec.name)));
        }
    }
    Ok(GradientRecord {
        loss: loss_value,
        grads,
        samples,
    })
}

#[cfg(test)]
mod tests;
