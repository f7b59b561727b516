//! Unfolded detection networks.
//!
//! Every network runs `L` layers from `x_hat_0 = 0` and emits one estimate
//! per layer. Forward passes are generic over [`Backend`], so the same code
//! serves inference ([`Eval`]) and training ([`crate::autodiff::Tape`]).
//! Inputs may carry several received vectors as columns of `y`, all sharing
//! one channel.

mod detnet;
mod fsnet;
mod mmnet;
mod model_file;
mod oampnet2;

pub use model_file::{load_model, read_model, save_model, write_model};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eval, Matrix};
use crate::error::{Error, Result};
use crate::modulation::{slice_hard, Alphabet, Scheme, SoftQuantizer};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "detnet")]
    DetNet,
    #[serde(rename = "fsnet")]
    FsNet,
    #[serde(rename = "oampnet2")]
    OampNet2,
    #[serde(rename = "mmnet")]
    MmNet,
    #[serde(rename = "mmnet_iid")]
    MmNetIid,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::DetNet,
        Family::FsNet,
        Family::OampNet2,
        Family::MmNet,
        Family::MmNetIid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::DetNet => "detnet",
            Family::FsNet => "fsnet",
            Family::OampNet2 => "oampnet2",
            Family::MmNet => "mmnet",
            Family::MmNetIid => "mmnet_iid",
        }
    }

    /// Tensors per layer, in storage order.
    fn tensors_per_layer(self) -> usize {
        match self {
            Family::DetNet => detnet::TENSORS.len(),
            Family::FsNet => fsnet::TENSORS.len(),
            Family::OampNet2 => oampnet2::TENSORS.len(),
            Family::MmNet | Family::MmNetIid => mmnet::TENSORS.len(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Family::ALL
            .into_iter()
            .find(|f| f.name().replace('_', "") == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown network family {s:?}")))
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// DetNet hidden width.
    pub h: usize,
    /// DetNet auxiliary vector length.
    pub v_dim: usize,
    /// Soft quantizer ramp half-width.
    pub w_soft: f64,
}

impl Hyper {
    pub fn default_for(users: usize, scheme: Scheme) -> Self {
        let k_r = 2 * users;
        Self {
            h: 4 * k_r,
            v_dim: 2 * k_r,
            w_soft: 0.25 * Alphabet::new(scheme).min_gap(),
        }
    }
}

/// Problem size of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Complex users `K`.
    pub users: usize,
    /// Complex receive antennas `N`.
    pub antennas: usize,
    pub layers: usize,
}

impl Dims {
    pub fn new(users: usize, antennas: usize, layers: usize) -> Self {
        Self { users, antennas, layers }
    }

    pub fn k_r(&self) -> usize {
        2 * self.users
    }

    pub fn n_r(&self) -> usize {
        2 * self.antennas
    }
}

/// Trainable parameters of one network, stored layer-major as dense
/// matrices in the family's declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    family: Family,
    dims: Dims,
    hyper: Hyper,
    alphabet: Alphabet,
    quantizer: SoftQuantizer,
    tensors: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ModelParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(family: Family, dims: Dims, scheme: Scheme, hyper: Hyper) -> Result<Self> {
        if dims.users == 0 || dims.antennas == 0 || dims.layers == 0 {
            return Err(Error::InvalidArgument(format!("network dimensions must be positive: {dims:?}")));
        }
        let alphabet = Alphabet::new(scheme);
        let quantizer = SoftQuantizer::new(alphabet.clone(), hyper.w_soft)?;
        let tensors = tensor_specs(family, dims, hyper)
            .iter()
            .map(|s| Matrix::zeros(s.rows, s.cols))
            .collect();
        Ok(Self {
            family,
            dims,
            hyper,
            alphabet,
            quantizer,
            tensors,
        })
    }

    /// Default initialization with default hyper-parameters. MMNet
    /// (unconstrained) is initialized from a channel, so `channel` is
    /// required for it and ignored otherwise.
    pub fn init(family: Family, dims: Dims, scheme: Scheme, seed: u64, channel: Option<&Matrix>) -> Result<Self> {
        Self::init_with(family, dims, scheme, Hyper::default_for(dims.users, scheme), seed, channel)
    }

    pub fn init_with(
        family: Family,
        dims: Dims,
        scheme: Scheme,
        hyper: Hyper,
        seed: u64,
        channel: Option<&Matrix>,
    ) -> Result<Self> {
        let mut p = Self::zeros(family, dims, scheme, hyper)?;
        let mut rng = rng::child_rng(seed, &[rng::stream::INIT]);
        match family {
            Family::DetNet => detnet::init(&mut p, &mut rng),
            Family::FsNet => fsnet::init(&mut p),
            Family::OampNet2 => oampnet2::init(&mut p),
            Family::MmNetIid => mmnet::init_iid(&mut p),
            Family::MmNet => {
                let h = channel.ok_or_else(|| {
                    Error::InvalidArgument("MMNet initialization needs the channel matrix".into())
                })?;
                mmnet::init_from_channel(&mut p, h)?;
            }
        }
        Ok(p)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn quantizer(&self) -> &SoftQuantizer {
        &self.quantizer
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        tensor_specs(self.family, self.dims, self.hyper)
    }

    /// Tensors of layer `layer` (0-based).
    pub fn layer(&self, layer: usize) -> &[Matrix] {
        let n = self.family.tensors_per_layer();
        &self.tensors[layer * n..(layer + 1) * n]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [Matrix] {
        let n = self.family.tensors_per_layer();
        &mut self.tensors[layer * n..(layer + 1) * n]
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn count_per_layer(&self) -> usize {
        self.layer(0).iter().map(|t| t.len()).sum()
    }

    /// Replaces all tensors, checking shapes.
    pub fn set_tensors(&mut self, tensors: Vec<Matrix>) -> Result<()> {
        check_shapes(&self.specs(), &tensors)?;
        self.tensors = tensors;
        Ok(())
    }

    /// Flattens all tensors, in storage order and column-major within each.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn check_shapes(specs: &[TensorSpec], tensors: &[Matrix]) -> Result<()> {
    if specs.len() != tensors.len() {
        return Err(Error::ModelMismatch(format!(
            "expected {} tensors, got {}",
            specs.len(),
            tensors.len()
        )));
    }
    for (s, t) in specs.iter().zip(tensors) {
        if t.shape() != (s.rows, s.cols) {
            return Err(Error::ModelMismatch(format!(
                "tensor {} should be {}x{}, got {:?}",
                s.name,
                s.rows,
                s.cols,
                t.shape()
            )));
        }
    }
    Ok(())
}

pub fn tensor_specs(family: Family, dims: Dims, hyper: Hyper) -> Vec<TensorSpec> {
    let per_layer: Vec<(&str, usize, usize)> = match family {
        Family::DetNet => detnet::shapes(dims, hyper),
        Family::FsNet => fsnet::shapes(dims),
        Family::OampNet2 => oampnet2::shapes(),
        Family::MmNet => mmnet::shapes(dims, false),
        Family::MmNetIid => mmnet::shapes(dims, true),
    };
    (0..dims.layers)
        .flat_map(|l| {
            per_layer.iter().map(move |&(name, rows, cols)| TensorSpec {
                name: format!("{name}[{l}]"),
                rows,
                cols,
            })
        })
        .collect()
}

/// Channel-dependent quantities shared by every received vector and layer.
#[derive(Debug)]
pub struct ChannelContext {
    h: Matrix,
    ht: Matrix,
    gram: Matrix,
    identity: Matrix,
    spectral: OnceLock<Spectral>,
}

#[derive(Debug)]
struct Spectral {
    /// Eigenvalues of `H^T H` as a `K_r x 1` column.
    eigenvalues: Matrix,
    basis: Matrix,
    /// `Q^T H^T`.
    projector: Matrix,
}

impl ChannelContext {
    pub fn new(h: Matrix) -> Self {
        let ht = h.transpose();
        let gram = &ht * &h;
        let identity = Matrix::identity(h.ncols(), h.ncols());
        Self {
            h,
            ht,
            gram,
            identity,
            spectral: OnceLock::new(),
        }
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn gram_trace(&self) -> f64 {
        self.gram.trace()
    }

    fn spectral(&self) -> &Spectral {
        self.spectral.get_or_init(|| {
            let eig = self.gram.clone().symmetric_eigen();
            let eigenvalues = Matrix::from_fn(eig.eigenvalues.len(), 1, |i, _| eig.eigenvalues[i].max(0.0));
            let projector = eig.eigenvectors.transpose() * &self.ht;
            Spectral {
                eigenvalues,
                basis: eig.eigenvectors,
                projector,
            }
        })
    }
}

/// Per-layer values of a forward pass.
pub(crate) struct Layers<V> {
    pub r: Vec<V>,
    pub x_hat: Vec<V>,
    /// DetNet: `v`; OAMP-Net2 and MMNet: denoiser variance; FS-Net: empty.
    pub aux: Vec<V>,
}

/// Values of a forward pass, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub family: Family,
    pub r: Vec<Matrix>,
    pub x_hat: Vec<Matrix>,
    pub aux: Vec<Matrix>,
    pub h: Matrix,
    pub y: Matrix,
    pub sigma2: f64,
}

impl ForwardTrace {
    pub fn layers(&self) -> usize {
        self.x_hat.len()
    }

    /// Final soft estimate.
    pub fn estimate(&self) -> &Matrix {
        &self.x_hat[self.x_hat.len() - 1]
    }

    /// Hard decision on column `col` of the final estimate.
    pub fn decision(&self, col: usize, alphabet: &Alphabet) -> Result<DVector<f64>> {
        slice_hard(&self.estimate().column(col).into_owned(), alphabet)
    }
}

pub(crate) fn bind_params<'p, B: Backend<'p>>(b: &mut B, model: &'p ModelParams) -> Vec<B::V> {
    model.tensors.iter().map(|t| b.param(t)).collect()
}

/// Records one forward pass on `b`.
pub(crate) fn run<'p, B: Backend<'p>>(
    b: &mut B,
    model: &'p ModelParams,
    params: &[B::V],
    ctx: &'p ChannelContext,
    y: &'p Matrix,
    sigma2: f64,
) -> Result<Layers<B::V>> {
    let (n_r, k_r) = (model.dims.n_r(), model.dims.k_r());
    if ctx.h.shape() != (n_r, k_r) {
        return Err(Error::Dimension(format!(
            "{} expects a {}x{} channel, got {:?}",
            model.family,
            n_r,
            k_r,
            ctx.h.shape()
        )));
    }
    if y.nrows() != n_r || y.ncols() == 0 {
        return Err(Error::Dimension(format!("y must have {} rows, got {:?}", n_r, y.shape())));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
    }
    let layers = match model.family {
        Family::DetNet => detnet::forward(b, model, params, ctx, y),
        Family::FsNet => fsnet::forward(b, model, params, ctx, y),
        Family::OampNet2 => oampnet2::forward(b, model, params, ctx, y, sigma2)?,
        Family::MmNet | Family::MmNetIid => mmnet::forward(b, model, params, ctx, y, sigma2),
    };
    for (l, v) in layers.r.iter().chain(&layers.x_hat).chain(&layers.aux).enumerate() {
        if b.value(v).iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} intermediate {} of {} layers",
                model.family,
                l,
                model.dims.layers
            )));
        }
    }
    Ok(layers)
}

/// Inference forward pass.
pub fn forward(model: &ModelParams, ctx: &ChannelContext, y: &Matrix, sigma2: f64) -> Result<ForwardTrace> {
    let mut e = Eval;
    let params = bind_params(&mut e, model);
    let layers = run(&mut e, model, &params, ctx, y, sigma2)?;
    let own = |v: Vec<std::borrow::Cow<'_, Matrix>>| v.into_iter().map(|c| c.into_owned()).collect();
    Ok(ForwardTrace {
        family: model.family,
        r: own(layers.r),
        x_hat: own(layers.x_hat),
        aux: own(layers.aux),
        h: ctx.h.clone(),
        y: y.clone(),
        sigma2,
    })
}

fn forward_family(
    expected: &[Family],
    model: &ModelParams,
    h: &Matrix,
    y: &DVector<f64>,
    sigma2: f64,
) -> Result<ForwardTrace> {
    if !expected.contains(&model.family) {
        return Err(Error::ModelMismatch(format!(
            "expected {:?} parameters, got {}",
            expected, model.family
        )));
    }
    let ctx = ChannelContext::new(h.clone());
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    forward(model, &ctx, &y, sigma2)
}

pub fn detnet_forward(model: &ModelParams, h: &Matrix, y: &DVector<f64>) -> Result<ForwardTrace> {
    forward_family(&[Family::DetNet], model, h, y, 0.0)
}

pub fn fsnet_forward(model: &ModelParams, h: &Matrix, y: &DVector<f64>) -> Result<ForwardTrace> {
    forward_family(&[Family::FsNet], model, h, y, 0.0)
}

pub fn oampnet2_forward(model: &ModelParams, h: &Matrix, y: &DVector<f64>, sigma2: f64) -> Result<ForwardTrace> {
    forward_family(&[Family::OampNet2], model, h, y, sigma2)
}

pub fn mmnet_forward(model: &ModelParams, h: &Matrix, y: &DVector<f64>, sigma2: f64) -> Result<ForwardTrace> {
    forward_family(&[Family::MmNet, Family::MmNetIid], model, h, y, sigma2)
}

/// Floor on the estimated error variances.
pub(crate) const VARIANCE_FLOOR: f64 = crate::detectors::OAMP_EPSILON;

/// `v^2 = max((||y - H x||^2 - N_r sigma2) / tr(H^T H), eps)` per column,
/// together with the residual `y - Hx`.
pub(crate) fn residual_variance<'p, B: Backend<'p>>(
    b: &mut B,
    h: &B::V,
    y: &B::V,
    x: &B::V,
    sigma2: f64,
    gram_trace: f64,
) -> (B::V, B::V) {
    let hx = b.matmul(h, x);
    let e = b.sub(y, &hx);
    let e2 = b.mul(&e, &e);
    let energy = b.col_sum(&e2);
    let n_r = b.value(y).nrows() as f64;
    let excess = b.add_const(&energy, -n_r * sigma2);
    let scaled = b.scale(&excess, 1.0 / gram_trace);
    (e, b.clamp_min(&scaled, VARIANCE_FLOOR))
}
