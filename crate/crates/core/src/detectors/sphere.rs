use nalgebra::{DMatrix, DVector};

use super::DetectionProblem;
use crate::error::{Error, Result};
use crate::modulation::Alphabet;

/// Starting radius of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialRadius {
    /// Residual of the sliced zero-forcing point, which also seeds the incumbent.
    Babai,
    /// A fixed radius on `||y - Hx||`, quadrupled in squared terms until the
    /// sphere contains a lattice point.
    Fixed(f64),
    Infinite,
}

/// Result of one sphere-decoder search.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereOutcome {
    pub x: DVector<f64>,
    /// `||y - Hx||^2` at the returned point.
    pub objective: f64,
    /// Tree nodes whose partial distance was evaluated.
    pub nodes_visited: u64,
    pub leaves_reached: u64,
}

/// Depth-first sphere decoder with Schnorr-Euchner child ordering over the
/// QR factorization `H = QR`. The factorization is computed once per
/// channel and reused across received vectors.
#[derive(Debug, Clone)]
pub struct SphereDecoder {
    qt: DMatrix<f64>,
    r: DMatrix<f64>,
    levels: Vec<f64>,
}

impl SphereDecoder {
    pub fn new(h: &DMatrix<f64>, alphabet: &Alphabet) -> Result<Self> {
        let (n_r, k_r) = h.shape();
        if n_r < k_r {
            return Err(Error::Singular(format!(
                "sphere decoding needs N_r >= K_r, got {n_r} x {k_r}"
            )));
        }
        let qr = h.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if !(scale > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
            return Err(Error::Singular("rank-deficient channel in sphere decoder".into()));
        }
        Ok(Self {
            qt: qr.q().transpose(),
            r,
            levels: alphabet.levels().to_vec(),
        })
    }

    /// Runs the search from the given initial radius.
    pub fn decode(&self, y: &DVector<f64>, radius: InitialRadius) -> Result<SphereOutcome> {
        if y.len() != self.qt.ncols() {
            return Err(Error::Dimension(format!(
                "y has length {} but channel has {} rows",
                y.len(),
                self.qt.ncols()
            )));
        }
        let z = &self.qt * y;
        // Energy of y outside the column space of H.
        let offset = (y.norm_squared() - z.norm_squared()).max(0.0);
        let k_r = self.r.ncols();
        let mut search = Search {
            r: &self.r,
            z: &z,
            levels: &self.levels,
            current: vec![0.0; k_r],
            best: None,
            bound: f64::INFINITY,
            nodes: 0,
            leaves: 0,
        };
        match radius {
            InitialRadius::Infinite => search.run(),
            InitialRadius::Babai => {
                let babai = self.babai(&z);
                search.bound = partial_distance(&self.r, &z, &babai);
                search.best = Some(babai);
                search.run();
            }
            InitialRadius::Fixed(r) => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidArgument(format!("sphere radius must be > 0, got {r}")));
                }
                let mut radius2 = (r * r - offset).max(0.0);
                loop {
                    search.bound = radius2;
                    search.run();
                    if search.best.is_some() {
                        break;
                    }
                    radius2 = if radius2 > 0.0 { 4.0 * radius2 } else { 1.0 };
                }
            }
        }
        let x = DVector::from_vec(search.best.expect("search always ends with an incumbent"));
        let objective = partial_distance(&self.r, &z, x.as_slice()) + offset;
        Ok(SphereOutcome {
            x,
            objective,
            nodes_visited: search.nodes,
            leaves_reached: search.leaves,
        })
    }

    /// Successive rounding of the triangular system.
    fn babai(&self, z: &DVector<f64>) -> Vec<f64> {
        let k_r = self.r.ncols();
        let mut x = vec![0.0; k_r];
        for k in (0..k_r).rev() {
            let center = center(&self.r, z, &x, k);
            x[k] = nearest(&self.levels, center);
        }
        x
    }
}

fn nearest(levels: &[f64], t: f64) -> f64 {
    let mut best = levels[0];
    for &a in &levels[1..] {
        if (t - a).abs() < (t - best).abs() {
            best = a;
        }
    }
    best
}

fn center(r: &DMatrix<f64>, z: &DVector<f64>, x: &[f64], k: usize) -> f64 {
    let mut acc = z[k];
    for j in k + 1..r.ncols() {
        acc -= r[(k, j)] * x[j];
    }
    acc / r[(k, k)]
}

fn partial_distance(r: &DMatrix<f64>, z: &DVector<f64>, x: &[f64]) -> f64 {
    (0..r.ncols())
        .map(|k| {
            let mut acc = z[k];
            for j in k..r.ncols() {
                acc -= r[(k, j)] * x[j];
            }
            acc * acc
        })
        .sum()
}

struct Search<'a> {
    r: &'a DMatrix<f64>,
    z: &'a DVector<f64>,
    levels: &'a [f64],
    current: Vec<f64>,
    best: Option<Vec<f64>>,
    /// Squared radius; children whose distance reaches it are pruned when an
    /// incumbent exists, and those exceeding it otherwise.
    bound: f64,
    nodes: u64,
    leaves: u64,
}

impl Search<'_> {
    fn run(&mut self) {
        let top = self.r.ncols() - 1;
        self.descend(top, 0.0);
    }

    fn descend(&mut self, k: usize, distance: f64) {
        let c = center(self.r, self.z, &self.current, k);
        let rkk2 = self.r[(k, k)] * self.r[(k, k)];
        let mut order: [(f64, f64); 8] = [(0.0, 0.0); 8];
        let m = self.levels.len();
        debug_assert!(m <= order.len());
        for (slot, &a) in order.iter_mut().zip(self.levels) {
            *slot = ((a - c).abs(), a);
        }
        order[..m].sort_by(|p, q| p.0.total_cmp(&q.0));
        for &(gap, a) in &order[..m] {
            self.nodes += 1;
            let d = distance + rkk2 * gap * gap;
            let pruned = if self.best.is_some() { d >= self.bound } else { d > self.bound };
            if pruned {
                // Later children are farther from the centre.
                break;
            }
            self.current[k] = a;
            if k == 0 {
                self.leaves += 1;
                self.bound = d;
                self.best = Some(self.current.clone());
            } else {
                self.descend(k - 1, d);
            }
        }
    }
}

/// Exact ML detection by sphere decoding. `None` starts from the Babai
/// point's residual; `Some(f64::INFINITY)` searches without an initial bound.
pub fn detect_sphere(p: &DetectionProblem<'_>, radius_init: Option<f64>) -> Result<DVector<f64>> {
    let decoder = SphereDecoder::new(p.h, p.alphabet)?;
    let radius = match radius_init {
        None => InitialRadius::Babai,
        Some(r) if r == f64::INFINITY => InitialRadius::Infinite,
        Some(r) => InitialRadius::Fixed(r),
    };
    Ok(decoder.decode(p.y, radius)?.x)
}
