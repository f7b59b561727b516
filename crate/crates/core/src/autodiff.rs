//! Reverse-mode differentiation over small dense matrices.
//!
//! Network forward passes are written once against [`Backend`]. [`Eval`]
//! computes values only; [`Tape`] additionally records every operation so
//! that [`Tape::backward`] can accumulate adjoints. Both call the same
//! kernels, so their forward values agree bitwise.
//!
//! Elementwise binary operations broadcast: each operand dimension must
//! either match the output or be 1. Columns usually index independent
//! samples sharing one channel.

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::detectors::{posterior_mean_only, posterior_moments};
use crate::modulation::{Alphabet, SoftQuantizer};

pub type Matrix = DMatrix<f64>;

/// Operations available to a forward pass.
pub trait Backend<'p> {
    type V: Clone;

    /// Trainable leaf.
    fn param(&mut self, m: &'p Matrix) -> Self::V;
    /// Non-trainable borrowed leaf.
    fn input(&mut self, m: &'p Matrix) -> Self::V;
    /// Non-trainable owned leaf.
    fn constant(&mut self, m: Matrix) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Matrix;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn add_const(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn softplus(&mut self, a: &Self::V) -> Self::V;
    fn sqrt(&mut self, a: &Self::V) -> Self::V;
    /// `max(a, floor)`.
    fn clamp_min(&mut self, a: &Self::V, floor: f64) -> Self::V;
    fn soft_quantize(&mut self, a: &Self::V, q: &'p SoftQuantizer) -> Self::V;
    /// Posterior mean of each entry of `r` given denoiser variance `tau2`
    /// (broadcast against `r`).
    fn posterior_mean(&mut self, r: &Self::V, tau2: &Self::V, alphabet: &'p Alphabet) -> Self::V;
    /// Sum of all entries, as a `1 x 1`.
    fn sum(&mut self, a: &Self::V) -> Self::V;
    /// Column sums, as a `1 x cols`.
    fn col_sum(&mut self, a: &Self::V) -> Self::V;
    fn vstack(&mut self, a: &Self::V, b: &Self::V) -> Self::V;

    fn scalar(&mut self, c: f64) -> Self::V {
        self.constant(Matrix::from_element(1, 1, c))
    }
}

pub(crate) mod kernels {
    use super::*;

    pub fn broadcast_shape(a: &Matrix, b: &Matrix) -> (usize, usize) {
        let dim = |x: usize, y: usize, what: &str| {
            if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                panic!("cannot broadcast {what}: {:?} vs {:?}", a.shape(), b.shape())
            }
        };
        (dim(a.nrows(), b.nrows(), "rows"), dim(a.ncols(), b.ncols(), "cols"))
    }

    #[inline]
    fn at(m: &Matrix, i: usize, j: usize) -> f64 {
        let i = if m.nrows() == 1 { 0 } else { i };
        let j = if m.ncols() == 1 { 0 } else { j };
        m[(i, j)]
    }

    pub fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        if a.shape() == b.shape() {
            return a.zip_map(b, f);
        }
        let (r, c) = broadcast_shape(a, b);
        let (ar, br) = (a.nrows(), b.nrows());
        fn column(m: &Matrix, rows: usize, j: usize) -> &[f64] {
            let j = if m.ncols() == 1 { 0 } else { j };
            &m.as_slice()[j * rows..(j + 1) * rows]
        }
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            let (ca, cb) = (column(a, ar, j), column(b, br, j));
            match (ar == r, br == r) {
                (true, true) => out.extend(ca.iter().zip(cb).map(|(&x, &y)| f(x, y))),
                (false, true) => out.extend(cb.iter().map(|&y| f(ca[0], y))),
                (true, false) => out.extend(ca.iter().map(|&x| f(x, cb[0]))),
                (false, false) => unreachable!(),
            }
        }
        Matrix::from_vec(r, c, out)
    }

    /// Sums `g` down to `shape`, undoing a broadcast.
    pub fn reduce_to(g: Matrix, shape: (usize, usize)) -> Matrix {
        if g.shape() == shape {
            return g;
        }
        let mut g = g;
        if shape.0 == 1 && g.nrows() != 1 {
            g = col_sums(&g);
        }
        if shape.1 == 1 && g.ncols() != 1 {
            g = Matrix::from_fn(g.nrows(), 1, |i, _| g.row(i).sum());
        }
        g
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn col_sums(m: &Matrix) -> Matrix {
        Matrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
    }

    pub fn softplus(t: f64) -> f64 {
        if t > 30.0 {
            t
        } else {
            t.exp().ln_1p()
        }
    }

    pub fn sigmoid(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    pub fn vstack(a: &Matrix, b: &Matrix) -> Matrix {
        assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
        let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
        out.rows_mut(0, a.nrows()).copy_from(a);
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
        out
    }

    pub fn posterior_mean(r: &Matrix, tau2: &Matrix, alphabet: &Alphabet) -> Matrix {
        let (rows, cols) = broadcast_shape(r, tau2);
        assert_eq!((rows, cols), r.shape(), "denoiser variance must broadcast to r");
        Matrix::from_fn(rows, cols, |i, j| posterior_mean_only(r[(i, j)], at(tau2, i, j), alphabet.levels()))
    }

    /// Posterior means with their partial derivatives.
    pub fn posterior(r: &Matrix, tau2: &Matrix, alphabet: &Alphabet) -> (Matrix, Matrix, Matrix) {
        let (rows, cols) = broadcast_shape(r, tau2);
        assert_eq!((rows, cols), r.shape(), "denoiser variance must broadcast to r");
        let mut mean = Matrix::zeros(rows, cols);
        let mut dr = Matrix::zeros(rows, cols);
        let mut dt = Matrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let m = posterior_moments(r[(i, j)], at(tau2, i, j), alphabet.levels());
                mean[(i, j)] = m.mean;
                dr[(i, j)] = m.dmean_dr;
                dt[(i, j)] = m.dmean_dtau2;
            }
        }
        (mean, dr, dt)
    }
}

/// Value-only backend.
#[derive(Debug, Default)]
pub struct Eval;

impl<'p> Backend<'p> for Eval {
    type V = Cow<'p, Matrix>;

    fn param(&mut self, m: &'p Matrix) -> Self::V {
        Cow::Borrowed(m)
    }
    fn input(&mut self, m: &'p Matrix) -> Self::V {
        Cow::Borrowed(m)
    }
    fn constant(&mut self, m: Matrix) -> Self::V {
        Cow::Owned(m)
    }
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Matrix {
        v
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(kernels::zip(a, b, |x, y| x + y))
    }
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(kernels::zip(a, b, |x, y| x - y))
    }
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(kernels::zip(a, b, |x, y| x * y))
    }
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(kernels::zip(a, b, |x, y| x / y))
    }
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(a.as_ref() * b.as_ref())
    }
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V {
        Cow::Owned(a.as_ref() * c)
    }
    fn add_const(&mut self, a: &Self::V, c: f64) -> Self::V {
        Cow::Owned(a.add_scalar(c))
    }
    fn relu(&mut self, a: &Self::V) -> Self::V {
        Cow::Owned(a.map(|t| t.max(0.0)))
    }
    fn softplus(&mut self, a: &Self::V) -> Self::V {
        Cow::Owned(a.map(kernels::softplus))
    }
    fn sqrt(&mut self, a: &Self::V) -> Self::V {
        Cow::Owned(a.map(f64::sqrt))
    }
    fn clamp_min(&mut self, a: &Self::V, floor: f64) -> Self::V {
        Cow::Owned(a.map(|t| t.max(floor)))
    }
    fn soft_quantize(&mut self, a: &Self::V, q: &'p SoftQuantizer) -> Self::V {
        Cow::Owned(a.map(|t| q.eval(t)))
    }
    fn posterior_mean(&mut self, r: &Self::V, tau2: &Self::V, alphabet: &'p Alphabet) -> Self::V {
        Cow::Owned(kernels::posterior_mean(r, tau2, alphabet))
    }
    fn sum(&mut self, a: &Self::V) -> Self::V {
        Cow::Owned(Matrix::from_element(1, 1, a.sum()))
    }
    fn col_sum(&mut self, a: &Self::V) -> Self::V {
        Cow::Owned(kernels::col_sums(a))
    }
    fn vstack(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        Cow::Owned(kernels::vstack(a, b))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'p> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    Softplus(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    SoftQuantize(usize, &'p SoftQuantizer),
    /// Stores `d mean / d r` and `d mean / d tau2`.
    PosteriorMean { r: usize, tau2: usize, dr: Matrix, dt: Matrix },
    Sum(usize),
    ColSum(usize),
    VStack(usize, usize),
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op<'p>,
    needs_grad: bool,
}

/// Recording backend.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    adjoints: Vec<Option<Matrix>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Region index of every input to a nonsmooth op (ReLU, clamp, soft
    /// quantizer) on a gradient path. Two forward passes with equal
    /// signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in self.nodes.iter().filter(|n| n.needs_grad) {
            match &node.op {
                Op::Relu(a) => sig.extend(self.val(*a).iter().map(|&t| (t > 0.0) as u32)),
                Op::ClampMin(a, floor) => sig.extend(self.val(*a).iter().map(|&t| (t >= *floor) as u32)),
                Op::SoftQuantize(a, q) => {
                    let knots = q.knots();
                    sig.extend(self.val(*a).iter().map(|&t| knots.partition_point(|&k| k <= t) as u32));
                }
                _ => {}
            }
        }
        sig
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op<'p>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: &Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: &Var, value: Matrix, op: Op<'p>) -> Var {
        let g = self.needs(a);
        self.push(Cow::Owned(value), op, g)
    }

    fn binary(&mut self, a: &Var, b: &Var, value: Matrix, op: Op<'p>) -> Var {
        let g = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(value), op, g)
    }

    fn val(&self, i: usize) -> &Matrix {
        &self.nodes[i].value
    }

    /// Accumulates adjoints of `output` scaled by `seed`. `output` must be
    /// `1 x 1`.
    pub fn backward(&mut self, output: Var, seed: f64) {
        assert_eq!(self.val(output.0).shape(), (1, 1), "backward needs a scalar output");
        self.adjoints = vec![None; self.nodes.len()];
        self.adjoints[output.0] = Some(Matrix::from_element(1, 1, seed));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.adjoints[i].take() else { continue };
            self.propagate(i, g);
        }
    }

    /// Adjoint of a node after [`Self::backward`]; `None` when no path leads
    /// from it to the output.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    fn accumulate(&mut self, target: usize, g: Matrix) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let g = kernels::reduce_to(g, self.val(target).shape());
        match &mut self.adjoints[target] {
            Some(acc) => *acc += g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: Matrix) {
        // Split borrows: read the op by index, then mutate adjoints.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].needs_grad {
                    let ga = kernels::zip(&g, self.val(*b), |x, y| x * y);
                    self.accumulate(*a, ga);
                }
                if self.nodes[*b].needs_grad {
                    let gb = kernels::zip(&g, self.val(*a), |x, y| x * y);
                    self.accumulate(*b, gb);
                }
            }
            Op::Div(a, b) => {
                if self.nodes[*a].needs_grad {
                    let ga = kernels::zip(&g, self.val(*b), |x, y| x / y);
                    self.accumulate(*a, ga);
                }
                if self.nodes[*b].needs_grad {
                    // d(a/b)/db = -out/b
                    let q = kernels::zip(self.val(i), self.val(*b), |o, y| -o / y);
                    let gb = g.component_mul(&q);
                    self.accumulate(*b, gb);
                }
            }
            Op::MatMul(a, b) => {
                if self.nodes[*a].needs_grad {
                    let ga = &g * self.val(*b).transpose();
                    self.accumulate(*a, ga);
                }
                if self.nodes[*b].needs_grad {
                    let gb = self.val(*a).tr_mul(&g);
                    self.accumulate(*b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(*a, g * *c),
            Op::Shift(a) => self.accumulate(*a, g),
            Op::Relu(a) => {
                let ga = g.zip_map(self.val(*a), |g, t| if t > 0.0 { g } else { 0.0 });
                self.accumulate(*a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.val(*a), |g, t| g * kernels::sigmoid(t));
                self.accumulate(*a, ga);
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(self.val(i), |g, s| g / (2.0 * s));
                self.accumulate(*a, ga);
            }
            Op::ClampMin(a, floor) => {
                let ga = g.zip_map(self.val(*a), |g, t| if t >= *floor { g } else { 0.0 });
                self.accumulate(*a, ga);
            }
            Op::SoftQuantize(a, q) => {
                let ga = g.zip_map(self.val(*a), |g, t| g * q.slope(t));
                self.accumulate(*a, ga);
            }
            Op::PosteriorMean { r, tau2, dr, dt } => {
                if self.nodes[*r].needs_grad {
                    self.accumulate(*r, g.component_mul(dr));
                }
                if self.nodes[*tau2].needs_grad {
                    self.accumulate(*tau2, g.component_mul(dt));
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(*a, Matrix::from_element(r, c, g[(0, 0)]));
            }
            Op::ColSum(a) => {
                let r = self.val(*a).nrows();
                let ga = Matrix::from_fn(r, g.ncols(), |_, j| g[(0, j)]);
                self.accumulate(*a, ga);
            }
            Op::VStack(a, b) => {
                let top = self.val(*a).nrows();
                let bottom = self.val(*b).nrows();
                let ga = g.rows(0, top).into_owned();
                let gb = g.rows(top, bottom).into_owned();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
        }
        self.nodes[i].op = op;
    }
}

impl<'p> Backend<'p> for Tape<'p> {
    type V = Var;

    fn param(&mut self, m: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, true)
    }
    fn input(&mut self, m: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }
    fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Matrix {
        self.val(v.0)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernels::zip(self.val(a.0), self.val(b.0), |x, y| x + y);
        self.binary(a, b, v, Op::Add(a.0, b.0))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernels::zip(self.val(a.0), self.val(b.0), |x, y| x - y);
        self.binary(a, b, v, Op::Sub(a.0, b.0))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernels::zip(self.val(a.0), self.val(b.0), |x, y| x * y);
        self.binary(a, b, v, Op::Mul(a.0, b.0))
    }
    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernels::zip(self.val(a.0), self.val(b.0), |x, y| x / y);
        self.binary(a, b, v, Op::Div(a.0, b.0))
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a.0) * self.val(b.0);
        self.binary(a, b, v, Op::MatMul(a.0, b.0))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.val(a.0) * c;
        self.unary(a, v, Op::Scale(a.0, c))
    }
    fn add_const(&mut self, a: &Var, c: f64) -> Var {
        let v = self.val(a.0).add_scalar(c);
        self.unary(a, v, Op::Shift(a.0))
    }
    fn relu(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(|t| t.max(0.0));
        self.unary(a, v, Op::Relu(a.0))
    }
    fn softplus(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(kernels::softplus);
        self.unary(a, v, Op::Softplus(a.0))
    }
    fn sqrt(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(f64::sqrt);
        self.unary(a, v, Op::Sqrt(a.0))
    }
    fn clamp_min(&mut self, a: &Var, floor: f64) -> Var {
        let v = self.val(a.0).map(|t| t.max(floor));
        self.unary(a, v, Op::ClampMin(a.0, floor))
    }
    fn soft_quantize(&mut self, a: &Var, q: &'p SoftQuantizer) -> Var {
        let v = self.val(a.0).map(|t| q.eval(t));
        self.unary(a, v, Op::SoftQuantize(a.0, q))
    }
    fn posterior_mean(&mut self, r: &Var, tau2: &Var, alphabet: &'p Alphabet) -> Var {
        let (mean, dr, dt) = kernels::posterior(self.val(r.0), self.val(tau2.0), alphabet);
        let op = Op::PosteriorMean {
            r: r.0,
            tau2: tau2.0,
            dr,
            dt,
        };
        self.binary(r, tau2, mean, op)
    }
    fn sum(&mut self, a: &Var) -> Var {
        let v = Matrix::from_element(1, 1, self.val(a.0).sum());
        self.unary(a, v, Op::Sum(a.0))
    }
    fn col_sum(&mut self, a: &Var) -> Var {
        let v = kernels::col_sums(self.val(a.0));
        self.unary(a, v, Op::ColSum(a.0))
    }
    fn vstack(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernels::vstack(self.val(a.0), self.val(b.0));
        self.binary(a, b, v, Op::VStack(a.0, b.0))
    }
}
