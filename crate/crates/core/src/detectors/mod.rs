//! Classical detectors: linear filters, exhaustive ML, sphere decoding and
//! OAMP with its posterior-mean denoiser.

mod denoiser;
mod linear;
mod ml;
mod oamp;
mod sphere;

pub use denoiser::{posterior_mean_denoiser, posterior_mean_only, posterior_moments, PosteriorMoments, Variance};
pub use linear::{detect_linear, linear_estimate, linear_filter, lmmse_filter, LinearKind};
pub use ml::{detect_ml, objective, ML_SEARCH_LIMIT};
pub use oamp::{oamp_detect, oamp_linear_estimator, oamp_trajectory, OampState, OAMP_EPSILON};
pub use sphere::{detect_sphere, InitialRadius, SphereDecoder, SphereOutcome};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::channel::{ChannelMatrix, ReceivedSignal};
use crate::error::{Error, Result};
use crate::modulation::Alphabet;

/// A real-valued detection instance `y = Hx + n`.
#[derive(Debug, Clone, Copy)]
pub struct DetectionProblem<'a> {
    pub h: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    /// Noise variance per real component.
    pub sigma2: f64,
    pub alphabet: &'a Alphabet,
}

impl<'a> DetectionProblem<'a> {
    pub fn new(h: &'a DMatrix<f64>, y: &'a DVector<f64>, sigma2: f64, alphabet: &'a Alphabet) -> Result<Self> {
        if h.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "channel has {} rows but y has length {}",
                h.nrows(),
                y.len()
            )));
        }
        if h.ncols() == 0 {
            return Err(Error::Dimension("channel has no columns".into()));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
        }
        if y.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detection problem".into()));
        }
        Ok(Self { h, y, sigma2, alphabet })
    }

    pub fn from_signal(h: &'a ChannelMatrix, rx: &'a ReceivedSignal, alphabet: &'a Alphabet) -> Result<Self> {
        Self::new(h.entries(), &rx.y, rx.noise_variance, alphabet)
    }

    pub fn k_r(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.h.nrows()
    }
}

/// Cholesky factorization that refuses numerically singular matrices.
pub(crate) fn spd_factor(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = a.diagonal().amax();
    let chol = Cholesky::new(a).ok_or_else(|| Error::Singular(what.to_string()))?;
    let l = chol.l_dirty();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(scale > 0.0) || min_pivot * min_pivot <= 1e-13 * scale {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(chol)
}
