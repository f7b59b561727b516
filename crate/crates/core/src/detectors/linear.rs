use nalgebra::{DMatrix, DVector};

use super::{spd_factor, DetectionProblem};
use crate::error::{Error, Result};
use crate::modulation::slice_hard;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    /// Matched filter, normalized per column.
    Mf,
    Zf,
    Lmmse,
}

/// Unsliced linear estimate.
pub fn linear_estimate(p: &DetectionProblem<'_>, kind: LinearKind) -> Result<DVector<f64>> {
    let hty = p.h.tr_mul(p.y);
    match kind {
        LinearKind::Mf => {
            let norms = p.h.row_iter().fold(DVector::zeros(p.k_r()), |acc: DVector<f64>, row| {
                acc + row.transpose().map(|v| v * v)
            });
            if norms.iter().any(|&n| n == 0.0) {
                return Err(Error::Singular("matched filter on a zero column".into()));
            }
            Ok(hty.component_div(&norms))
        }
        LinearKind::Zf => Ok(spd_factor(p.h.tr_mul(p.h), "zero-forcing Gram matrix")?.solve(&hty)),
        LinearKind::Lmmse => {
            let mut a = p.h.tr_mul(p.h);
            let load = p.sigma2 / p.alphabet.real_energy();
            for i in 0..a.nrows() {
                a[(i, i)] += load;
            }
            Ok(spd_factor(a, "LMMSE inner matrix")?.solve(&hty))
        }
    }
}

pub fn detect_linear(p: &DetectionProblem<'_>, kind: LinearKind) -> Result<DVector<f64>> {
    slice_hard(&linear_estimate(p, kind)?, p.alphabet)
}

/// The `K_r x N_r` matrix `F` with `linear_estimate = F y`, for reuse
/// across many received vectors sharing one channel.
pub fn linear_filter(h: &DMatrix<f64>, kind: LinearKind, sigma2: f64, real_energy: f64) -> Result<DMatrix<f64>> {
    match kind {
        LinearKind::Mf => {
            let mut f = h.transpose();
            for (i, mut row) in f.row_iter_mut().enumerate() {
                let n = h.column(i).norm_squared();
                if n == 0.0 {
                    return Err(Error::Singular("matched filter on a zero column".into()));
                }
                row /= n;
            }
            Ok(f)
        }
        LinearKind::Zf => Ok(spd_factor(h.tr_mul(h), "zero-forcing Gram matrix")?.solve(&h.transpose())),
        LinearKind::Lmmse => lmmse_filter(h, sigma2, real_energy),
    }
}

/// The `K_r x N_r` LMMSE filter `(H^T H + sigma2/E I)^{-1} H^T`, for reuse
/// across many received vectors sharing one channel.
pub fn lmmse_filter(h: &DMatrix<f64>, sigma2: f64, real_energy: f64) -> Result<DMatrix<f64>> {
    let mut a = h.tr_mul(h);
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2 / real_energy;
    }
    Ok(spd_factor(a, "LMMSE inner matrix")?.solve(&h.transpose()))
}
