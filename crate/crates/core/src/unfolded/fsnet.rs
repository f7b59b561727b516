//! FS-Net: a per-coordinate scaled gradient step followed by the soft
//! quantizer.

use super::{detnet::pgd_step, ChannelContext, Dims, Layers, ModelParams};
use crate::autodiff::{Backend, Matrix};

pub(super) const TENSORS: [&str; 3] = ["W1", "W2", "b"];

pub(super) fn shapes(d: Dims) -> Vec<(&'static str, usize, usize)> {
    let k_r = d.k_r();
    vec![("W1", k_r, 1), ("W2", k_r, 1), ("b", k_r, 1)]
}

/// Plain projected gradient descent.
pub(super) fn init(p: &mut ModelParams) {
    let delta = pgd_step(p.dims());
    for l in 0..p.dims().layers {
        let t = p.layer_mut(l);
        t[0].fill(-delta);
        t[1].fill(1.0);
        t[2].fill(0.0);
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
    let gram = b.input(&ctx.gram);
    let hty = b.constant(&ctx.ht * y);
    let mut x = b.constant(Matrix::zeros(d.k_r(), y.ncols()));
    let mut out = Layers {
        r: Vec::with_capacity(d.layers),
        x_hat: Vec::with_capacity(d.layers),
        aux: Vec::new(),
    };
    let n = TENSORS.len();
    for l in 0..d.layers {
        let t = &params[l * n..(l + 1) * n];
        let gx = b.matmul(&gram, &x);
        let grad = b.sub(&gx, &hty);
        let a = b.mul(&t[1], &x);
        let c = b.mul(&t[0], &grad);
        let r = b.add(&a, &c);
        let r = b.add(&r, &t[2]);
        x = b.soft_quantize(&r, model.quantizer());
        out.r.push(r);
        out.x_hat.push(x.clone());
    }
    out
}
