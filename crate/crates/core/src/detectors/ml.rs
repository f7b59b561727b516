use nalgebra::{DMatrix, DVector};

use super::DetectionProblem;
use crate::error::{Error, Result};

/// Largest search space the exhaustive detector will enumerate.
pub const ML_SEARCH_LIMIT: f64 = (1u64 << 24) as f64;

/// `||y - Hx||^2`.
pub fn objective(h: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (y - h * x).norm_squared()
}

/// Exact maximum-likelihood detection by enumeration of `A^{K_r}`.
///
/// Candidates are visited in lexicographic order of their level indices
/// (first coordinate most significant) and only a strictly smaller objective
/// replaces the incumbent, so ties resolve to the lexicographically first.
pub fn detect_ml(p: &DetectionProblem<'_>) -> Result<DVector<f64>> {
    let k_r = p.k_r();
    let m = p.alphabet.size();
    let candidates = (m as f64).powi(k_r as i32);
    if candidates > ML_SEARCH_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            candidates,
            limit: ML_SEARCH_LIMIT,
        });
    }
    let n_r = p.n_r();
    // residuals[d] holds y - sum_{j<d} h_j x_j.
    let mut residuals = vec![0.0; n_r * (k_r + 1)];
    residuals[..n_r].copy_from_slice(p.y.as_slice());
    let mut search = Search {
        h: p.h,
        levels: p.alphabet.levels(),
        residuals,
        current: vec![0; k_r],
        best: vec![0; k_r],
        best_value: f64::INFINITY,
    };
    search.descend(0);
    let levels = p.alphabet.levels();
    Ok(DVector::from_iterator(k_r, search.best.iter().map(|&i| levels[i])))
}

struct Search<'a> {
    h: &'a DMatrix<f64>,
    levels: &'a [f64],
    residuals: Vec<f64>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize) {
        let n_r = self.h.nrows();
        if depth == self.h.ncols() {
            let r = &self.residuals[depth * n_r..];
            let value: f64 = r.iter().map(|v| v * v).sum();
            if value < self.best_value {
                self.best_value = value;
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        for (i, &a) in self.levels.iter().enumerate() {
            self.current[depth] = i;
            let (head, tail) = self.residuals.split_at_mut((depth + 1) * n_r);
            let parent = &head[depth * n_r..];
            let column = self.h.column(depth);
            for ((out, &r), &c) in tail[..n_r].iter_mut().zip(parent).zip(column.iter()) {
                *out = r - c * a;
            }
            self.descend(depth + 1);
        }
    }
}
