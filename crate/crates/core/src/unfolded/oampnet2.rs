//! OAMP-Net2: OAMP with four trainable scalars per layer.
//!
//! The linear estimator is evaluated in the eigenbasis of `G = H^T H`:
//! `W' = v2 (v2 G + sigma2 I)^{-1} H^T = Q diag(v2 / (v2 lambda + sigma2)) Q^T H^T`,
//! so every trace reduces to a sum over the eigenvalues.

use super::{residual_variance, ChannelContext, Layers, ModelParams, VARIANCE_FLOOR};
use crate::autodiff::{Backend, Matrix};
use crate::error::{Error, Result};

pub(super) const TENSORS: [&str; 4] = ["gamma", "theta", "phi", "xi"];

pub(super) fn shapes() -> Vec<(&'static str, usize, usize)> {
    TENSORS.iter().map(|&n| (n, 1, 1)).collect()
}

/// Plain OAMP.
pub(super) fn init(p: &mut ModelParams) {
    for l in 0..p.dims().layers {
        let t = p.layer_mut(l);
        t[0].fill(1.0);
        t[1].fill(1.0);
        t[2].fill(1.0);
        t[3].fill(0.0);
    }
}

pub(super) fn forward<'p, B: Backend<'p>>(
    b: &mut B,
    model: &'p ModelParams,
    params: &[B::V],
    ctx: &'p ChannelContext,
    y: &'p Matrix,
    sigma2: f64,
) -> Result<Layers<B::V>> {
    let d = model.dims();
    let k_r = d.k_r() as f64;
    let spec = ctx.spectral();
    let max_eig = spec.eigenvalues.max();
    if sigma2 == 0.0 && spec.eigenvalues.min() <= 1e-12 * max_eig.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular("OAMP-Net2 inner matrix is singular without noise".into()));
    }
    let gram_trace = ctx.gram_trace();
    let h = b.input(&ctx.h);
    let yv = b.input(y);
    let lambda = b.input(&spec.eigenvalues);
    let basis = b.input(&spec.basis);
    let projector = b.input(&spec.projector);
    let k_r_const = b.scalar(k_r);
    let mut x = b.constant(Matrix::zeros(d.k_r(), y.ncols()));
    let mut out = Layers {
        r: Vec::with_capacity(d.layers),
        x_hat: Vec::with_capacity(d.layers),
        aux: Vec::with_capacity(d.layers),
    };
    let n = TENSORS.len();
    for l in 0..d.layers {
        let t = &params[l * n..(l + 1) * n];
        let (gamma, theta, phi, xi) = (&t[0], &t[1], &t[2], &t[3]);
        let (e, v2) = residual_variance(b, &h, &yv, &x, sigma2, gram_trace);

        let s = b.mul(&lambda, &v2);
        let den = b.add_const(&s, sigma2);
        let frac = b.div(&s, &den);
        let trace = b.col_sum(&frac);
        let c = b.div(&k_r_const, &trace);
        let dvec = b.div(&v2, &den);

        let pe = b.matmul(&projector, &e);
        let cd = b.mul(&c, &dvec);
        let scaled = b.mul(&cd, &pe);
        let we = b.matmul(&basis, &scaled);
        let step = b.mul(gamma, &we);
        let r = b.add(&x, &step);

        let tcf = b.mul(theta, &c);
        let tcf = b.mul(&tcf, &frac);
        let one_minus = b.scale(&tcf, -1.0);
        let one_minus = b.add_const(&one_minus, 1.0);
        let sq = b.mul(&one_minus, &one_minus);
        let tr_cc = b.col_sum(&sq);
        let d2 = b.mul(&dvec, &dvec);
        let d2l = b.mul(&d2, &lambda);
        let sum_d2l = b.col_sum(&d2l);
        let c2 = b.mul(&c, &c);
        let tr_ww = b.mul(&c2, &sum_d2l);
        let theta2 = b.mul(theta, theta);

        let a = b.mul(&v2, &tr_cc);
        let a = b.scale(&a, 1.0 / k_r);
        let w_term = b.mul(&theta2, &tr_ww);
        let w_term = b.scale(&w_term, sigma2 / k_r);
        let tau2 = b.add(&a, &w_term);
        let tau2 = b.clamp_min(&tau2, VARIANCE_FLOOR);

        let eta = b.posterior_mean(&r, &tau2, model.alphabet());
        let eta = b.mul(phi, &eta);
        let lin = b.mul(xi, &r);
        x = b.sub(&eta, &lin);
        out.r.push(r);
        out.x_hat.push(x.clone());
        out.aux.push(tau2);
    }
    Ok(out)
}
