//! Real-valued alphabets, slicing, and the soft quantizer used inside the
//! gradient-descent networks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bpsk,
    Qpsk,
    Qam16,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "bpsk" => Ok(Scheme::Bpsk),
            "qpsk" => Ok(Scheme::Qpsk),
            "qam16" | "16qam" => Ok(Scheme::Qam16),
            other => Err(Error::InvalidArgument(format!("unsupported modulation {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bpsk => "bpsk",
            Scheme::Qpsk => "qpsk",
            Scheme::Qam16 => "qam16",
        })
    }
}

/// Sorted real symbol levels of one real dimension of a constellation.
///
/// Square complex constellations split into two independent copies of the
/// same real alphabet. Levels are scaled so complex symbols carry unit
/// average energy; BPSK is a purely real alphabet with unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    levels: Vec<f64>,
    scheme: Scheme,
}

impl Alphabet {
    pub fn new(scheme: Scheme) -> Self {
        let levels = match scheme {
            Scheme::Bpsk => vec![-1.0, 1.0],
            Scheme::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                vec![-a, a]
            }
            Scheme::Qam16 => {
                let s = 10f64.sqrt();
                vec![-3.0 / s, -1.0 / s, 1.0 / s, 3.0 / s]
            }
        };
        Self { levels, scheme }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn size(&self) -> usize {
        self.levels.len()
    }

    pub fn bits_per_real_symbol(&self) -> u32 {
        self.levels.len().trailing_zeros()
    }

    pub fn min_level(&self) -> f64 {
        self.levels[0]
    }

    pub fn max_level(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    /// Mean squared level, the energy per real component.
    pub fn real_energy(&self) -> f64 {
        self.levels.iter().map(|a| a * a).sum::<f64>() / self.levels.len() as f64
    }

    /// Average energy of one complex symbol built from this alphabet.
    pub fn complex_energy(&self) -> f64 {
        match self.scheme {
            Scheme::Bpsk => self.real_energy(),
            _ => 2.0 * self.real_energy(),
        }
    }

    pub fn min_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Decision thresholds between consecutive levels.
    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    /// Index of the nearest level; ties go to the lower level.
    pub fn nearest_index(&self, t: f64) -> usize {
        self.midpoints().take_while(|&m| t > m).count()
    }

    pub fn nearest(&self, t: f64) -> f64 {
        self.levels[self.nearest_index(t)]
    }
}

pub fn make_alphabet(scheme: &str) -> Result<Alphabet> {
    Ok(Alphabet::new(scheme.parse()?))
}

/// I.i.d. uniform draws over the levels.
pub fn random_symbols(alphabet: &Alphabet, k_r: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng::rng(seed);
    random_symbols_with(alphabet, k_r, &mut rng)
}

pub(crate) fn random_symbols_with(alphabet: &Alphabet, k_r: usize, rng: &mut rng::Rng) -> DVector<f64> {
    let m = alphabet.size();
    DVector::from_fn(k_r, |_, _| alphabet.levels[rng.random_range(0..m)])
}

/// A `k_r x cols` matrix of independent symbol vectors.
pub(crate) fn random_symbol_block(alphabet: &Alphabet, k_r: usize, cols: usize, rng: &mut rng::Rng) -> DMatrix<f64> {
    let m = alphabet.size();
    DMatrix::from_fn(k_r, cols, |_, _| alphabet.levels[rng.random_range(0..m)])
}

/// Replaces every entry with its nearest level.
pub fn slice_hard(r: &DVector<f64>, alphabet: &Alphabet) -> Result<DVector<f64>> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slicer input".into()));
    }
    Ok(r.map(|t| alphabet.nearest(t)))
}

/// Piecewise-linear staircase approximating the hard slicer: one linear
/// ramp of half-width `w` centred on every decision midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQuantizer {
    alphabet: Alphabet,
    width: f64,
}

impl SoftQuantizer {
    pub fn new(alphabet: Alphabet, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidArgument(format!("soft quantizer width must be > 0, got {width}")));
        }
        Ok(Self { alphabet, width })
    }

    /// Width of a quarter of the smallest level gap.
    pub fn with_default_width(alphabet: Alphabet) -> Self {
        let width = 0.25 * alphabet.min_gap();
        Self { alphabet, width }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn eval(&self, t: f64) -> f64 {
        let w = self.width;
        let levels = &self.alphabet.levels;
        let mut out = levels[0];
        for pair in levels.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            out += (pair[1] - pair[0]) * ((t - mid + w) / (2.0 * w)).clamp(0.0, 1.0);
        }
        out
    }

    /// Right-derivative of [`Self::eval`].
    pub fn slope(&self, t: f64) -> f64 {
        let w = self.width;
        let levels = &self.alphabet.levels;
        let mut out = 0.0;
        for pair in levels.windows(2) {
            let mid = 0.5 * (pair[0] + pair[1]);
            let u = (t - mid + w) / (2.0 * w);
            if (0.0..1.0).contains(&u) {
                out += (pair[1] - pair[0]) / (2.0 * w);
            }
        }
        out
    }

    /// Ramp end points, where the quantizer is not differentiable.
    pub fn knots(&self) -> Vec<f64> {
        self.alphabet
            .midpoints()
            .flat_map(|m| [m - self.width, m + self.width])
            .collect()
    }
}

pub fn soft_quantize(r: &DVector<f64>, q: &SoftQuantizer) -> Result<DVector<f64>> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("soft quantizer input".into()));
    }
    Ok(r.map(|t| q.eval(t)))
}

/// Number of complex symbols in error. Entry `k` pairs with `k + len/2`.
pub fn symbol_errors(x_hat: &DVector<f64>, x: &DVector<f64>, alphabet: &Alphabet) -> Result<usize> {
    if x_hat.len() != x.len() {
        return Err(Error::Dimension(format!(
            "estimate has length {} but reference has {}",
            x_hat.len(),
            x.len()
        )));
    }
    if x.len() % 2 != 0 {
        return Err(Error::Dimension(format!("odd real length {} has no complex pairing", x.len())));
    }
    let sliced = slice_hard(x_hat, alphabet)?;
    let half = x.len() / 2;
    Ok((0..half)
        .filter(|&k| sliced[k] != x[k] || sliced[k + half] != x[k + half])
        .count())
}

/// Symbol error rate over complex symbols.
pub fn ser(x_hat: &DVector<f64>, x: &DVector<f64>, alphabet: &Alphabet) -> Result<f64> {
    let errors = symbol_errors(x_hat, x, alphabet)?;
    Ok(errors as f64 / (x.len() / 2).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_levels() {
        assert_eq!(Alphabet::new(Scheme::Bpsk).levels(), &[-1.0, 1.0]);
        let q = Alphabet::new(Scheme::Qpsk);
        assert!((q.levels()[1] - 0.70710678).abs() < 1e-8);
        let expect = [-0.9486833, -0.31622777, 0.31622777, 0.9486833];
        for (a, b) in Alphabet::new(Scheme::Qam16).levels().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(make_alphabet("64qam").is_err());
        assert_eq!(make_alphabet("16-QAM").unwrap().scheme(), Scheme::Qam16);
    }

    #[test]
    fn complex_symbols_have_unit_energy() {
        for s in [Scheme::Bpsk, Scheme::Qpsk, Scheme::Qam16] {
            let a = Alphabet::new(s);
            assert!((a.complex_energy() - 1.0).abs() < 1e-12, "{s}");
            assert!(a.levels().windows(2).all(|w| w[0] < w[1]));
            assert!(a.levels().iter().zip(a.levels().iter().rev()).all(|(x, y)| x == &-y));
        }
        assert_eq!(Alphabet::new(Scheme::Qam16).bits_per_real_symbol(), 2);
    }

    #[test]
    fn slicing_and_ties() {
        let a = Alphabet::new(Scheme::Bpsk);
        let r = DVector::from_vec(vec![0.9, -0.2]);
        assert_eq!(slice_hard(&r, &a).unwrap().as_slice(), &[1.0, -1.0]);
        assert_eq!(slice_hard(&DVector::from_element(1, 0.0), &a).unwrap()[0], -1.0);
        assert!(slice_hard(&DVector::from_element(1, f64::NAN), &a).is_err());
    }

    #[test]
    fn quantizer_saturates_and_is_odd() {
        let q = SoftQuantizer::new(Alphabet::new(Scheme::Bpsk), 0.5).unwrap();
        assert_eq!(q.eval(-10.0), -1.0);
        assert_eq!(q.eval(10.0), 1.0);
        assert_eq!(q.eval(0.0), 0.0);
        assert!(SoftQuantizer::new(Alphabet::new(Scheme::Bpsk), 0.0).is_err());
    }

    #[test]
    fn quantizer_fixes_levels() {
        let a = Alphabet::new(Scheme::Qam16);
        let q = SoftQuantizer::new(a.clone(), 0.1).unwrap();
        for &l in a.levels() {
            assert!((q.eval(l) - l).abs() < 1e-15);
        }
    }

    #[test]
    fn quantizer_slope_is_right_derivative() {
        let q = SoftQuantizer::new(Alphabet::new(Scheme::Bpsk), 0.5).unwrap();
        assert_eq!(q.slope(-0.5), 2.0);
        assert_eq!(q.slope(0.5), 0.0);
        assert_eq!(q.slope(0.0), 2.0);
        assert_eq!(q.knots(), vec![-0.5, 0.5]);
    }

    #[test]
    fn ser_counts_complex_symbols() {
        let a = Alphabet::new(Scheme::Qpsk);
        let s = a.levels()[1];
        let x = DVector::from_vec(vec![s, -s, s, s]);
        assert_eq!(ser(&x, &x, &a).unwrap(), 0.0);
        assert_eq!(ser(&(-&x), &x, &a).unwrap(), 1.0);
        let mut one = x.clone();
        one[2] = -s;
        assert_eq!(ser(&one, &x, &a).unwrap(), 0.5);
        assert!(ser(&x, &DVector::zeros(2), &a).is_err());
    }
}
