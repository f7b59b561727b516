use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::modulation::Alphabet;

/// Moments of `x | r = x + tau z` under a uniform prior on the levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub variance: f64,
    /// `d mean / d r`, equal to `variance / tau2`.
    pub dmean_dr: f64,
    /// `d mean / d tau2`.
    pub dmean_dtau2: f64,
}

/// One `exp` instead of the libm routine; absolute error stays near 1e-16.
fn tanh(u: f64) -> f64 {
    let t = 1.0 - 2.0 / ((2.0 * u.abs()).exp() + 1.0);
    t.copysign(u)
}

/// `Some(a)` for the levels `{-a, a}`, where the mean is `a tanh(a r / tau2)`.
fn antipodal(levels: &[f64]) -> Option<f64> {
    match levels {
        [lo, hi] if *lo == -*hi => Some(*hi),
        _ => None,
    }
}

/// Posterior moments for a single entry. Weights are normalized after
/// subtracting the largest exponent.
pub fn posterior_moments(r: f64, tau2: f64, levels: &[f64]) -> PosteriorMoments {
    if let Some(a) = antipodal(levels) {
        let t = tanh(a * r / tau2);
        let variance = a * a * (1.0 - t * t);
        return PosteriorMoments {
            mean: a * t,
            variance,
            dmean_dr: variance / tau2,
            dmean_dtau2: -variance * r / (tau2 * tau2),
        };
    }
    debug_assert!(levels.len() <= 16);
    let mut expo = [0.0f64; 16];
    let mut peak = f64::NEG_INFINITY;
    for (e, &a) in expo.iter_mut().zip(levels) {
        let d = r - a;
        *e = -d * d / (2.0 * tau2);
        peak = peak.max(*e);
    }
    let (mut z, mut s1, mut s2, mut sd2, mut sad2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&e, &a) in expo.iter().zip(levels) {
        let w = (e - peak).exp();
        let d2 = (r - a) * (r - a);
        z += w;
        s1 += w * a;
        s2 += w * a * a;
        sd2 += w * d2;
        sad2 += w * a * d2;
    }
    let mean = s1 / z;
    let variance = (s2 / z - mean * mean).max(0.0);
    PosteriorMoments {
        mean,
        variance,
        dmean_dr: variance / tau2,
        dmean_dtau2: (sad2 / z - mean * sd2 / z) / (2.0 * tau2 * tau2),
    }
}

/// The `mean` field of [`posterior_moments`] alone.
pub fn posterior_mean_only(r: f64, tau2: f64, levels: &[f64]) -> f64 {
    if let Some(a) = antipodal(levels) {
        return a * tanh(a * r / tau2);
    }
    debug_assert!(levels.len() <= 16);
    let mut expo = [0.0f64; 16];
    let mut peak = f64::NEG_INFINITY;
    for (e, &a) in expo.iter_mut().zip(levels) {
        let d = r - a;
        *e = -d * d / (2.0 * tau2);
        peak = peak.max(*e);
    }
    let (mut z, mut s1) = (0.0, 0.0);
    for (&e, &a) in expo.iter().zip(levels) {
        let w = (e - peak).exp();
        z += w;
        s1 += w * a;
    }
    s1 / z
}

/// Denoiser input variance, shared by all entries or given per entry.
#[derive(Debug, Clone, Copy)]
pub enum Variance<'a> {
    Scalar(f64),
    PerEntry(&'a DVector<f64>),
}

/// Entrywise posterior mean and variance.
pub fn posterior_mean_denoiser(
    r: &DVector<f64>,
    tau2: Variance<'_>,
    alphabet: &Alphabet,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoiser input".into()));
    }
    let at = |k: usize| match tau2 {
        Variance::Scalar(t) => t,
        Variance::PerEntry(v) => v[k],
    };
    if let Variance::PerEntry(v) = tau2 {
        if v.len() != r.len() {
            return Err(Error::Dimension(format!(
                "{} variances for {} entries",
                v.len(),
                r.len()
            )));
        }
    }
    let mut mean = DVector::zeros(r.len());
    let mut var = DVector::zeros(r.len());
    for k in 0..r.len() {
        let t = at(k);
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonFinite(format!("denoiser variance {t}")));
        }
        let m = posterior_moments(r[k], t, alphabet.levels());
        mean[k] = m.mean;
        var[k] = m.variance;
    }
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulation::Scheme;

    #[test]
    fn prior_dominates_at_large_variance() {
        let a = Alphabet::new(Scheme::Qam16);
        let m = posterior_moments(0.4, 1e9, a.levels());
        assert!(m.mean.abs() < 1e-9);
        assert!((m.variance - a.real_energy()).abs() < 1e-9);
    }

    #[test]
    fn likelihood_dominates_at_small_variance() {
        let a = Alphabet::new(Scheme::Qam16);
        let l = a.levels()[2];
        let m = posterior_moments(l + 0.01, 1e-6, a.levels());
        assert!((m.mean - l).abs() < 1e-12);
        assert!(m.variance < 1e-12);
    }

    #[test]
    fn far_inputs_do_not_overflow() {
        let a = Alphabet::new(Scheme::Qpsk);
        let m = posterior_moments(1e4, 1e-9, a.levels());
        assert_eq!(m.mean, a.max_level());
        assert!(m.dmean_dr.is_finite() && m.dmean_dtau2.is_finite());
    }

    #[test]
    fn derivatives_match_differences() {
        let a = Alphabet::new(Scheme::Qam16);
        let (r, t, h) = (0.37, 0.08, 1e-6);
        let m = posterior_moments(r, t, a.levels());
        let dr = (posterior_moments(r + h, t, a.levels()).mean - posterior_moments(r - h, t, a.levels()).mean) / (2.0 * h);
        let dt = (posterior_moments(r, t + h, a.levels()).mean - posterior_moments(r, t - h, a.levels()).mean) / (2.0 * h);
        assert!((m.dmean_dr - dr).abs() < 1e-7);
        assert!((m.dmean_dtau2 - dt).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Alphabet::new(Scheme::Qpsk);
        let r = DVector::from_element(2, 0.1);
        assert!(posterior_mean_denoiser(&r, Variance::Scalar(0.0), &a).is_err());
        let v = DVector::from_element(3, 1.0);
        assert!(posterior_mean_denoiser(&r, Variance::PerEntry(&v), &a).is_err());
        let bad = DVector::from_element(2, f64::INFINITY);
        assert!(posterior_mean_denoiser(&bad, Variance::Scalar(1.0), &a).is_err());
    }

    #[test]
    fn mean_only_matches_full_moments() {
        let a = Alphabet::new(Scheme::Qam16);
        for (r, t) in [(0.3, 0.2), (-2.5, 1e-4), (7.0, 3.0)] {
            assert_eq!(posterior_mean_only(r, t, a.levels()), posterior_moments(r, t, a.levels()).mean);
        }
    }
}
