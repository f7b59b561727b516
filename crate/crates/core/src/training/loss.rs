use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eval, Matrix};
use crate::error::{Error, Result};
use crate::unfolded::{Family, ForwardTrace};

/// Training objective over the per-layer estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `sum_l log(l) ||x - x_l||^2`.
    Weighted,
    /// The weighted loss minus `rho_c sum_l log(l) cos(x_l, x)`.
    Correlation { rho_c: f64 },
}

impl LossKind {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::FsNet => LossKind::Correlation { rho_c: 1.0 },
            _ => LossKind::Weighted,
        }
    }
}

/// Records the loss summed over the columns of `x`, as a `1 x 1` value.
pub(crate) fn loss_graph<'p, B: Backend<'p>>(b: &mut B, x_hat: &[B::V], x: &'p Matrix, kind: LossKind) -> Result<B::V> {
    if x_hat.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "the layer-weighted loss needs at least 2 layers, got {}",
            x_hat.len()
        )));
    }
    for xl in x_hat {
        if b.value(xl).shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "estimate {:?} does not match labels {:?}",
                b.value(xl).shape(),
                x.shape()
            )));
        }
    }
    let xv = b.input(x);
    let corr = match kind {
        LossKind::Weighted => None,
        LossKind::Correlation { rho_c } => {
            let norms = Matrix::from_fn(1, x.ncols(), |_, j| x.column(j).norm());
            if norms.iter().any(|&n| n == 0.0) {
                return Err(Error::InvalidArgument("correlation loss needs nonzero labels".into()));
            }
            Some((rho_c, b.constant(norms)))
        }
    };
    let mut total: Option<B::V> = None;
    for (l, xl) in x_hat.iter().enumerate().skip(1) {
        let w = ((l + 1) as f64).ln();
        let diff = b.sub(xl, &xv);
        let sq = b.mul(&diff, &diff);
        let mut term = b.sum(&sq);
        if let Some((rho_c, x_norms)) = &corr {
            // Columns with a zero estimate drop the correlation term; the
            // shift keeps their square root away from zero.
            let value = b.value(xl);
            let mask = Matrix::from_fn(1, value.ncols(), |_, j| (value.column(j).norm_squared() > 0.0) as u8 as f64);
            let shift = mask.map(|m| 1.0 - m);
            let mask = b.constant(mask);
            let shift = b.constant(shift);
            let prod = b.mul(xl, &xv);
            let dot = b.col_sum(&prod);
            let sq_hat = b.mul(xl, xl);
            let energy = b.col_sum(&sq_hat);
            let energy = b.add(&energy, &shift);
            let norm = b.sqrt(&energy);
            let denom = b.mul(&norm, x_norms);
            let cos = b.div(&dot, &denom);
            let cos = b.mul(&cos, &mask);
            let cos = b.sum(&cos);
            let cos = b.scale(&cos, -rho_c);
            term = b.add(&term, &cos);
        }
        let term = b.scale(&term, w);
        total = Some(match total {
            None => term,
            Some(t) => b.add(&t, &term),
        });
    }
    Ok(total.expect("at least one weighted layer"))
}

/// Mean per-column loss of a trace against labels `x`.
pub fn loss_value(trace: &ForwardTrace, x: &Matrix, kind: LossKind) -> Result<f64> {
    let mut e = Eval;
    let x_hat: Vec<_> = trace.x_hat.iter().map(|m| e.input(m)).collect();
    let total = loss_graph(&mut e, &x_hat, x, kind)?;
    Ok(total[(0, 0)] / x.ncols() as f64)
}

pub fn detnet_loss(trace: &ForwardTrace, x: &Matrix) -> Result<f64> {
    loss_value(trace, x, LossKind::Weighted)
}

pub fn fsnet_loss(trace: &ForwardTrace, x: &Matrix, rho_c: f64) -> Result<f64> {
    loss_value(trace, x, LossKind::Correlation { rho_c })
}
