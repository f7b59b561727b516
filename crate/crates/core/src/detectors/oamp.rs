use nalgebra::{DMatrix, DVector};

use super::denoiser::{posterior_mean_denoiser, Variance};
use super::{spd_factor, DetectionProblem};
use crate::error::{Error, Result};
use crate::modulation::slice_hard;

/// Floor applied to the error-variance estimates.
pub const OAMP_EPSILON: f64 = 1e-9;

/// State after one OAMP iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OampState {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Linear-stage output fed to the denoiser.
    pub r: DVector<f64>,
    /// Error variance of the incoming estimate.
    pub v2: f64,
    /// Denoiser input variance.
    pub tau2: f64,
    /// Denoiser output, the next estimate.
    pub x_hat: DVector<f64>,
}

/// Trace-normalized LMMSE-form estimator
/// `W = K_r / tr(W' H) * W'` with `W' = v2 H^T (v2 H H^T + sigma2 I)^{-1}`.
pub fn oamp_linear_estimator(h: &DMatrix<f64>, v2: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    let n_r = h.nrows();
    let mut inner = v2 * h * h.transpose();
    for i in 0..n_r {
        inner[(i, i)] += sigma2;
    }
    // W'^T = (v2 H H^T + sigma2 I)^{-1} v2 H since the inner matrix is symmetric.
    let w_t = spd_factor(inner, "OAMP inner matrix")?.solve(&(h * v2));
    let w = w_t.transpose();
    let trace = (&w * h).trace();
    if !(trace > 0.0) {
        return Err(Error::Singular("OAMP estimator has zero trace".into()));
    }
    Ok(w * (h.ncols() as f64 / trace))
}

/// Runs `layers` OAMP iterations from `x_hat = 0`.
pub fn oamp_trajectory(p: &DetectionProblem<'_>, layers: usize) -> Result<Vec<OampState>> {
    if layers == 0 {
        return Err(Error::InvalidArgument("OAMP needs at least one iteration".into()));
    }
    let (h, y, sigma2) = (p.h, p.y, p.sigma2);
    let (n_r, k_r) = (p.n_r() as f64, p.k_r());
    let gram_trace = h.norm_squared();
    let mut x_hat = DVector::zeros(k_r);
    let mut states = Vec::with_capacity(layers);
    for iteration in 1..=layers {
        let residual = y - h * &x_hat;
        let v2 = ((residual.norm_squared() - n_r * sigma2) / gram_trace).max(OAMP_EPSILON);
        let w = oamp_linear_estimator(h, v2, sigma2)?;
        let r = &x_hat + &w * &residual;
        let c = DMatrix::identity(k_r, k_r) - &w * h;
        let tau2 = (v2 / k_r as f64 * c.norm_squared() + sigma2 / k_r as f64 * w.norm_squared())
            .max(OAMP_EPSILON);
        let (mean, _) = posterior_mean_denoiser(&r, Variance::Scalar(tau2), p.alphabet)?;
        x_hat = mean;
        states.push(OampState {
            iteration,
            r,
            v2,
            tau2,
            x_hat: x_hat.clone(),
        });
    }
    Ok(states)
}

/// OAMP detection: the final estimate, sliced.
pub fn oamp_detect(p: &DetectionProblem<'_>, layers: usize) -> Result<DVector<f64>> {
    let states = oamp_trajectory(p, layers)?;
    slice_hard(&states[states.len() - 1].x_hat, p.alphabet)
}
