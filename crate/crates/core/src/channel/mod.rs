//! Channel matrices and the real-valued system model `y = Hx + n`.
//!
//! A complex `N x K` channel `Hc` is carried in its real isomorphism
//!
//! ```text
//! H = [ Re(Hc)  -Im(Hc) ]
//!     [ Im(Hc)   Re(Hc) ]
//! ```
//!
//! acting on vectors stacked as `[Re; Im]`.

mod file;

pub use file::{export_channels, import_channels, read_channels, write_channels, ChannelFileEncoding};

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Provenance of a channel realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    IidRayleigh,
    Kronecker,
    Imported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: DMatrix<f64>,
    users: usize,
    antennas: usize,
    model: ModelTag,
    seed: u64,
    rho: Option<f64>,
}

impl ChannelMatrix {
    /// Wraps a real `2N x 2K` matrix.
    pub fn from_real(entries: DMatrix<f64>, model: ModelTag, seed: u64) -> Result<Self> {
        let (rows, cols) = entries.shape();
        if rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0 {
            return Err(Error::Dimension(format!(
                "real channel must be 2N x 2K with N, K >= 1, got {rows} x {cols}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel entries".into()));
        }
        Ok(Self {
            entries,
            users: cols / 2,
            antennas: rows / 2,
            model,
            seed,
            rho: None,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Number of complex users `K`.
    pub fn users(&self) -> usize {
        self.users
    }

    /// Number of complex receive antennas `N`.
    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Real row count `N_r = 2N`.
    pub fn n_r(&self) -> usize {
        2 * self.antennas
    }

    /// Real column count `K_r = 2K`.
    pub fn k_r(&self) -> usize {
        2 * self.users
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Receive correlation coefficient, for Kronecker channels.
    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// True when the matrix has the `[[A, -B], [B, A]]` structure of a
    /// realified complex matrix, up to `tol`.
    pub fn is_complex_structured(&self, tol: f64) -> bool {
        let (n, k) = (self.antennas, self.users);
        let m = &self.entries;
        (0..n).all(|i| {
            (0..k).all(|j| {
                (m[(i, j)] - m[(i + n, j + k)]).abs() <= tol
                    && (m[(i, j + k)] + m[(i + n, j)]).abs() <= tol
            })
        })
    }

    /// Recovers the complex matrix from the realified blocks.
    pub fn to_complex(&self) -> DMatrix<Complex<f64>> {
        let (n, k) = (self.antennas, self.users);
        DMatrix::from_fn(n, k, |i, j| {
            Complex::new(self.entries[(i, j)], self.entries[(i + n, j)])
        })
    }
}

/// Noisy observation of `Hx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: DVector<f64>,
    /// Noise variance per real component. Zero only for the noiseless path.
    pub noise_variance: f64,
    pub snr_db: f64,
}

impl ReceivedSignal {
    pub fn is_noiseless(&self) -> bool {
        self.noise_variance == 0.0
    }
}

/// Real isomorphism of a complex matrix.
pub fn realify_matrix(hc: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let (n, k) = hc.shape();
    let mut h = DMatrix::zeros(2 * n, 2 * k);
    for i in 0..n {
        for j in 0..k {
            let c = hc[(i, j)];
            h[(i, j)] = c.re;
            h[(i, j + k)] = -c.im;
            h[(i + n, j)] = c.im;
            h[(i + n, j + k)] = c.re;
        }
    }
    h
}

/// Stacks `[Re; Im]`.
pub fn realify_vector(v: &DVector<Complex<f64>>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`realify_vector`].
pub fn complexify_vector(v: &DVector<f64>) -> Result<DVector<Complex<f64>>> {
    if v.len() % 2 != 0 {
        return Err(Error::Dimension(format!("odd real length {}", v.len())));
    }
    let n = v.len() / 2;
    Ok(DVector::from_fn(n, |i, _| Complex::new(v[i], v[i + n])))
}

/// Converts a complex system `(Hc, yc)` into its real counterpart.
pub fn complex_to_real(
    hc: &DMatrix<Complex<f64>>,
    yc: &DVector<Complex<f64>>,
) -> Result<(ChannelMatrix, DVector<f64>)> {
    if hc.nrows() != yc.len() {
        return Err(Error::Dimension(format!(
            "channel has {} rows but received vector has length {}",
            hc.nrows(),
            yc.len()
        )));
    }
    let h = ChannelMatrix::from_real(realify_matrix(hc), ModelTag::Imported, 0)?;
    Ok((h, realify_vector(yc)))
}

/// Draws `Hc` with i.i.d. `CN(0, 1)` entries and returns its realification.
pub fn sample_rayleigh(users: usize, antennas: usize, seed: u64) -> Result<ChannelMatrix> {
    if users == 0 || antennas == 0 {
        return Err(Error::InvalidArgument(format!(
            "need K >= 1 and N >= 1, got K={users}, N={antennas}"
        )));
    }
    let mut rng = rng::rng(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let hc = DMatrix::from_fn(antennas, users, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(scale * re, scale * im)
    });
    ChannelMatrix::from_real(realify_matrix(&hc), ModelTag::IidRayleigh, seed)
}

/// Exponential correlation profile `R[i, j] = rho^|i - j|`.
pub fn exponential_correlation(size: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn symmetric_sqrt(r: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = r.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Applies receive-side Kronecker correlation `R^{1/2} Hc`.
pub fn apply_correlation(h: &ChannelMatrix, rho: f64) -> Result<ChannelMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    if h.model != ModelTag::IidRayleigh {
        return Err(Error::InvalidArgument(format!(
            "correlation applies to i.i.d. Rayleigh channels, got {:?}",
            h.model
        )));
    }
    let n = h.antennas;
    let root = symmetric_sqrt(&exponential_correlation(n, rho));
    // R^{1/2} is real, so it acts blockwise on the realified matrix.
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&root);
    block.view_mut((n, n), (n, n)).copy_from(&root);
    let mut out = ChannelMatrix::from_real(&block * &h.entries, ModelTag::Kronecker, h.seed)?;
    out.rho = Some(rho);
    Ok(out)
}

/// Channel distribution used for training and simulation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    #[default]
    IidRayleigh,
    /// Receive-side exponential correlation with coefficient `rho`.
    Kronecker { rho: f64 },
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelModel::IidRayleigh => Ok(()),
            ChannelModel::Kronecker { rho } if (0.0..1.0).contains(&rho) => Ok(()),
            ChannelModel::Kronecker { rho } => {
                Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")))
            }
        }
    }

    pub fn sample(&self, users: usize, antennas: usize, seed: u64) -> Result<ChannelMatrix> {
        let h = sample_rayleigh(users, antennas, seed)?;
        match *self {
            ChannelModel::IidRayleigh => Ok(h),
            ChannelModel::Kronecker { rho } => apply_correlation(&h, rho),
        }
    }
}

/// Adds `N(0, sigma2)` noise to `H X` for a block of symbol columns.
pub(crate) fn transmit_block(h: &DMatrix<f64>, x: &DMatrix<f64>, sigma2: f64, rng: &mut rng::Rng) -> DMatrix<f64> {
    let mut y = h * x;
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
    }
    y
}

/// Per-real-component noise variance for a nominal SNR, assuming unit-energy
/// complex symbols and `CN(0, 1)` channel entries.
pub fn noise_variance(users: usize, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    users as f64 / (2.0 * 10f64.powf(snr_db / 10.0))
}

/// Produces `y = Hx + n`. `snr_db = +inf` selects the noiseless path.
pub fn simulate(h: &ChannelMatrix, x: &DVector<f64>, snr_db: f64, seed: u64) -> Result<ReceivedSignal> {
    if x.len() != h.k_r() {
        return Err(Error::Dimension(format!(
            "symbol vector has length {} but channel expects {}",
            x.len(),
            h.k_r()
        )));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(format!("invalid SNR {snr_db} dB")));
    }
    let sigma2 = noise_variance(h.users, snr_db);
    let mut y = &h.entries * x;
    if sigma2 > 0.0 {
        let mut rng = rng::rng(seed);
        let sd = sigma2.sqrt();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
    }
    Ok(ReceivedSignal {
        y,
        noise_variance: sigma2,
        snr_db,
    })
}
