#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use mimo_detect::channel::{sample_rayleigh, simulate};
use mimo_detect::modulation::{random_symbols, Alphabet, Scheme};
use mimo_detect::rng::derive_seed;

pub struct Problem {
    pub h: DMatrix<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma2: f64,
    pub alphabet: Alphabet,
}

/// One i.i.d. Rayleigh instance at `snr_db`.
pub fn problem(users: usize, antennas: usize, scheme: Scheme, snr_db: f64, seed: u64) -> Problem {
    let alphabet = Alphabet::new(scheme);
    let h = sample_rayleigh(users, antennas, derive_seed(seed, &[1])).unwrap();
    let x = random_symbols(&alphabet, 2 * users, derive_seed(seed, &[2]));
    let rx = simulate(&h, &x, snr_db, derive_seed(seed, &[3])).unwrap();
    Problem {
        h: h.into_entries(),
        x,
        y: rx.y,
        sigma2: rx.noise_variance,
        alphabet,
    }
}

/// Posterior mean written straight from its definition, without any
/// rescaling of the weights. Valid while the largest weight stays far from
/// underflow.
pub fn enumerated_mean(r: f64, tau2: f64, levels: &[f64]) -> f64 {
    let weights: Vec<f64> = levels.iter().map(|a| (-(r - a).powi(2) / (2.0 * tau2)).exp()).collect();
    let z: f64 = weights.iter().sum();
    levels.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / z
}

/// SNR where a SER curve crosses `target`, interpolating `log10(SER)`
/// linearly between the bracketing grid points.
pub fn snr_at_ser(points: &[(f64, f64)], target: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((s0, p0), (s1, p1)) = (w[0], w[1]);
        if p0 >= target && p1 <= target && p0 > 0.0 && p1 > 0.0 {
            let (l0, l1, lt) = (p0.log10(), p1.log10(), target.log10());
            Some(if l0 == l1 { s0 } else { s0 + (s1 - s0) * (l0 - lt) / (l0 - l1) })
        } else {
            None
        }
    })
}
