//! DetNet: projected-gradient layers with a small fully connected network.

use rand_distr::{Distribution, Normal};

use super::{ChannelContext, Dims, Hyper, Layers, ModelParams};
use crate::autodiff::{Backend, Matrix};
use crate::rng::Rng;

pub(super) const TENSORS: [&str; 8] = ["W1", "b1", "W2", "b2", "W3", "b3", "theta1", "theta2"];

/// Standard deviation of the random perturbation added at initialization.
const INIT_STD: f64 = 0.01;

pub(super) fn shapes(d: Dims, hp: Hyper) -> Vec<(&'static str, usize, usize)> {
    let k_r = d.k_r();
    vec![
        ("W1", hp.h, k_r + hp.v_dim),
        ("b1", hp.h, 1),
        ("W2", k_r, hp.h),
        ("b2", k_r, 1),
        ("W3", hp.v_dim, hp.h),
        ("b3", hp.v_dim, 1),
        ("theta1", 1, 1),
        ("theta2", 1, 1),
    ]
}

/// Gradient step that stays stable for the largest typical Gram eigenvalue
/// of an i.i.d. channel.
pub(super) fn pgd_step(d: Dims) -> f64 {
    let ratio = (d.users as f64 / d.antennas as f64).sqrt();
    1.0 / (d.antennas as f64 * (1.0 + ratio).powi(2))
}

/// Embeds projected gradient descent (`x <- psi(x - delta (G x - H^T y))`)
/// through `z = [relu(r); relu(-r); 0]`, then perturbs the weights.
pub(super) fn init(p: &mut ModelParams, rng: &mut Rng) {
    let d = p.dims();
    let k_r = d.k_r();
    let hidden = p.hyper().h;
    let delta = pgd_step(d);
    let noise = Normal::new(0.0, INIT_STD).expect("valid std");
    for l in 0..d.layers {
        let t = p.layer_mut(l);
        if hidden >= 2 * k_r {
            for i in 0..k_r {
                t[0][(i, i)] = 1.0;
                t[0][(k_r + i, i)] = -1.0;
                t[2][(i, i)] = 1.0;
                t[2][(i, k_r + i)] = -1.0;
            }
        }
        for &w in &[0, 2, 4] {
            t[w].iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        t[6][(0, 0)] = -delta;
        t[7][(0, 0)] = -delta;
    }
}

pub(super) fn forward<'p, B: Backend<'p>>(
    b: &mut B,
    model: &'p ModelParams,
    params: &[B::V],
    ctx: &'p ChannelContext,
    y: &'p Matrix,
) -> Layers<B::V> {
    let d = model.dims();
    let cols = y.ncols();
    let gram = b.input(&ctx.gram);
    let hty = b.constant(&ctx.ht * y);
    let mut x = b.constant(Matrix::zeros(d.k_r(), cols));
    let mut v = b.constant(Matrix::zeros(model.hyper().v_dim, cols));
    let mut out = Layers {
        r: Vec::with_capacity(d.layers),
        x_hat: Vec::with_capacity(d.layers),
        aux: Vec::with_capacity(d.layers),
    };
    let n = TENSORS.len();
    for l in 0..d.layers {
        let t = &params[l * n..(l + 1) * n];
        let step_y = b.mul(&t[6], &hty);
        let gx = b.matmul(&gram, &x);
        let step_g = b.mul(&t[7], &gx);
        let r0 = b.sub(&x, &step_y);
        let r = b.add(&r0, &step_g);
        let stacked = b.vstack(&r, &v);
        let pre = b.matmul(&t[0], &stacked);
        let pre = b.add(&pre, &t[1]);
        let z = b.relu(&pre);
        let xo = b.matmul(&t[2], &z);
        let xo = b.add(&xo, &t[3]);
        x = b.soft_quantize(&xo, model.quantizer());
        let vo = b.matmul(&t[4], &z);
        v = b.add(&vo, &t[5]);
        out.r.push(r);
        out.x_hat.push(x.clone());
        out.aux.push(v.clone());
    }
    out
}
