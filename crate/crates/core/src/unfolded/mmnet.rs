//! MMNet: a trainable linear stage followed by the posterior-mean denoiser
//! with trainable per-user noise scaling. No matrix inverse is formed.

use super::{residual_variance, ChannelContext, Dims, Layers, ModelParams, VARIANCE_FLOOR};
use crate::autodiff::{Backend, Matrix};
use crate::error::{Error, Result};

pub(super) const TENSORS: [&str; 2] = ["theta1", "theta2"];

pub(super) fn shapes(d: Dims, iid: bool) -> Vec<(&'static str, usize, usize)> {
    if iid {
        vec![("theta1", 1, 1), ("theta2", 1, 1)]
    } else {
        vec![("Theta1", d.k_r(), d.n_r()), ("theta2", d.k_r(), 1)]
    }
}

/// `softplus^{-1}(1)`, so the learned noise scale starts at one.
pub(super) fn unit_softplus_inverse() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// Matched filter normalized by the expected Gram diagonal.
pub(super) fn init_iid(p: &mut ModelParams) {
    let step = 1.0 / p.dims().antennas as f64;
    for l in 0..p.dims().layers {
        let t = p.layer_mut(l);
        t[0].fill(step);
        t[1].fill(unit_softplus_inverse());
    }
}

/// `Theta1 = K_r / tr(H^T H) * H^T`, the trace-normalized matched filter of
/// the channel being trained on.
pub(super) fn init_from_channel(p: &mut ModelParams, h: &Matrix) -> Result<()> {
    let d = p.dims();
    if h.shape() != (d.n_r(), d.k_r()) {
        return Err(Error::Dimension(format!(
            "MMNet expects a {}x{} channel, got {:?}",
            d.n_r(),
            d.k_r(),
            h.shape()
        )));
    }
    let trace = h.norm_squared();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::InvalidArgument("channel has no energy".into()));
    }
    let theta1 = h.transpose() * (d.k_r() as f64 / trace);
    for l in 0..d.layers {
        let t = p.layer_mut(l);
        t[0].copy_from(&theta1);
        t[1].fill(unit_softplus_inverse());
    }
    Ok(())
}

pub(super) fn forward<'p, B: Backend<'p>>(
    b: &mut B,
    model: &'p ModelParams,
    params: &[B::V],
    ctx: &'p ChannelContext,
    y: &'p Matrix,
    sigma2: f64,
) -> Layers<B::V> {
    let d = model.dims();
    let k_r = d.k_r() as f64;
    let iid = model.family() == super::Family::MmNetIid;
    let gram_trace = ctx.gram_trace();
    let h = b.input(&ctx.h);
    let ht = b.input(&ctx.ht);
    let gram = b.input(&ctx.gram);
    let eye = b.input(&ctx.identity);
    let yv = b.input(y);
    let mut x = b.constant(Matrix::zeros(d.k_r(), y.ncols()));
    let mut out = Layers {
        r: Vec::with_capacity(d.layers),
        x_hat: Vec::with_capacity(d.layers),
        aux: Vec::with_capacity(d.layers),
    };
    let n = TENSORS.len();
    for l in 0..d.layers {
        let t = &params[l * n..(l + 1) * n];
        let (e, v2) = residual_variance(b, &h, &yv, &x, sigma2, gram_trace);
        let (step, c, filter_energy) = if iid {
            let hte = b.matmul(&ht, &e);
            let step = b.mul(&t[0], &hte);
            let tg = b.mul(&t[0], &gram);
            let c = b.sub(&eye, &tg);
            let t2 = b.mul(&t[0], &t[0]);
            (step, c, b.scale(&t2, gram_trace))
        } else {
            let step = b.matmul(&t[0], &e);
            let th = b.matmul(&t[0], &h);
            let c = b.sub(&eye, &th);
            let t2 = b.mul(&t[0], &t[0]);
            (step, c, b.sum(&t2))
        };
        let r = b.add(&x, &step);
        let c2 = b.mul(&c, &c);
        let fro = b.sum(&c2);
        let a = b.mul(&fro, &v2);
        let w = b.scale(&filter_energy, sigma2);
        let base = b.add(&a, &w);
        let base = b.scale(&base, 1.0 / k_r);
        let scale = b.softplus(&t[1]);
        let tau2 = b.mul(&scale, &base);
        let tau2 = b.clamp_min(&tau2, VARIANCE_FLOOR);
        x = b.posterior_mean(&r, &tau2, model.alphabet());
        out.r.push(r);
        out.x_hat.push(x.clone());
        out.aux.push(tau2);
    }
    out
}

