//! Monte-Carlo SER sweeps, runtime benchmarks, and result files.

mod bench;
mod results;
mod sweep;

pub use bench::{render_timings, runtime_bench, write_timings, BenchSpec, TimingResult, CV_LIMIT};
pub use results::{read_results, render_results, wilson_interval, write_results, OutputFormat};
pub use sweep::{ser_sweep, SweepPoint, SweepResult, SweepSpec};

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::channel::{import_channels, ChannelMatrix, ChannelModel};
use crate::detectors::{linear_filter, oamp_detect, DetectionProblem, InitialRadius, LinearKind, SphereDecoder};
use crate::error::{Error, Result};
use crate::modulation::{Alphabet, Scheme};
use crate::training::{train_online_mmnet, OnlineConfig};
use crate::unfolded::{forward, load_model, ChannelContext, Dims, Family, ModelParams};

/// What to run in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Mf,
    Zf,
    Lmmse,
    Ml,
    Sphere,
    Oamp {
        layers: usize,
    },
    /// A trained network from a model file.
    Model {
        path: PathBuf,
    },
    /// A network with its default initialization.
    Untrained {
        family: Family,
        layers: usize,
    },
    /// Unconstrained MMNet retrained for every channel.
    MmnetOnline {
        layers: usize,
        epochs: usize,
        /// Received vectors per channel realization.
        #[serde(default = "default_block")]
        block: usize,
        #[serde(default = "default_online_batch")]
        batch_size: usize,
        #[serde(default = "default_online_lr")]
        learning_rate: f64,
    },
}

fn default_block() -> usize {
    1000
}
fn default_online_batch() -> usize {
    500
}
fn default_online_lr() -> f64 {
    1e-3
}

impl DetectorSpec {
    pub fn mmnet_online(layers: usize, epochs: usize) -> Self {
        DetectorSpec::MmnetOnline {
            layers,
            epochs,
            block: default_block(),
            batch_size: default_online_batch(),
            learning_rate: default_online_lr(),
        }
    }
}

/// Channel realizations for an experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    #[default]
    IidRayleigh,
    Kronecker { rho: f64 },
    /// Realizations from a channel file, used in order and cycled.
    File { path: PathBuf },
}

pub(crate) enum Channels {
    Random(ChannelModel),
    List(Vec<ChannelMatrix>),
}

impl Channels {
    pub(crate) fn prepare(spec: &ChannelSpec, users: usize, antennas: usize) -> Result<Self> {
        match spec {
            ChannelSpec::IidRayleigh => Ok(Channels::Random(ChannelModel::IidRayleigh)),
            ChannelSpec::Kronecker { rho } => {
                let m = ChannelModel::Kronecker { rho: *rho };
                m.validate()?;
                Ok(Channels::Random(m))
            }
            ChannelSpec::File { path } => {
                let list = import_channels(path)?;
                if list.is_empty() {
                    return Err(Error::InvalidArgument(format!("{} holds no channels", path.display())));
                }
                if list[0].users() != users || list[0].antennas() != antennas {
                    return Err(Error::Dimension(format!(
                        "{} holds {}x{} channels, experiment needs N={antennas}, K={users}",
                        path.display(),
                        list[0].antennas(),
                        list[0].users()
                    )));
                }
                Ok(Channels::List(list))
            }
        }
    }

    pub(crate) fn draw(&self, users: usize, antennas: usize, index: u64, seed: u64) -> Result<ChannelMatrix> {
        match self {
            Channels::Random(m) => m.sample(users, antennas, seed),
            Channels::List(list) => Ok(list[(index % list.len() as u64) as usize].clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Detector {
    Linear(LinearKind),
    Ml,
    Sphere,
    Oamp(usize),
    Network(Arc<ModelParams>),
    Online {
        layers: usize,
        epochs: usize,
        block: usize,
        batch_size: usize,
        learning_rate: f64,
    },
}

/// Output of detecting one block of received vectors on one channel.
pub(crate) struct BlockDecision {
    pub decisions: Matrix,
    pub training_seconds: Option<f64>,
}

impl Detector {
    pub(crate) fn prepare(spec: &DetectorSpec, users: usize, antennas: usize, scheme: Scheme) -> Result<Self> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidArgument(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        Ok(match spec {
            DetectorSpec::Mf => Detector::Linear(LinearKind::Mf),
            DetectorSpec::Zf => Detector::Linear(LinearKind::Zf),
            DetectorSpec::Lmmse => Detector::Linear(LinearKind::Lmmse),
            DetectorSpec::Ml => Detector::Ml,
            DetectorSpec::Sphere => Detector::Sphere,
            DetectorSpec::Oamp { layers } => {
                positive("layers", *layers)?;
                Detector::Oamp(*layers)
            }
            DetectorSpec::Model { path } => {
                let m = load_model(path)?;
                let d = m.dims();
                if d.users != users || d.antennas != antennas || m.alphabet().scheme() != scheme {
                    return Err(Error::ModelMismatch(format!(
                        "{} is a (K={}, N={}, {}) model, experiment is (K={users}, N={antennas}, {scheme})",
                        path.display(),
                        d.users,
                        d.antennas,
                        m.alphabet().scheme()
                    )));
                }
                if m.family() == Family::MmNet {
                    return Err(Error::ModelMismatch(
                        "unconstrained MMNet models are channel-specific; use mmnet_online".into(),
                    ));
                }
                Detector::Network(Arc::new(m))
            }
            DetectorSpec::Untrained { family, layers } => {
                positive("layers", *layers)?;
                if *family == Family::MmNet {
                    return Err(Error::InvalidArgument(
                        "unconstrained MMNet is initialized per channel; use mmnet_online".into(),
                    ));
                }
                let m = ModelParams::init(*family, Dims::new(users, antennas, *layers), scheme, 0, None)?;
                Detector::Network(Arc::new(m))
            }
            DetectorSpec::MmnetOnline {
                layers,
                epochs,
                block,
                batch_size,
                learning_rate,
            } => {
                positive("block", *block)?;
                OnlineConfig {
                    batch_size: *batch_size,
                    learning_rate: *learning_rate,
                    ..OnlineConfig::new(*layers, scheme, 0.0)
                }
                .validate()?;
                Detector::Online {
                    layers: *layers,
                    epochs: *epochs,
                    block: *block,
                    batch_size: *batch_size,
                    learning_rate: *learning_rate,
                }
            }
        })
    }

    pub(crate) fn label(&self) -> String {
        match self {
            Detector::Linear(LinearKind::Mf) => "MF".into(),
            Detector::Linear(LinearKind::Zf) => "ZF".into(),
            Detector::Linear(LinearKind::Lmmse) => "LMMSE".into(),
            Detector::Ml => "ML".into(),
            Detector::Sphere => "SD".into(),
            Detector::Oamp(_) => "OAMP".into(),
            Detector::Network(m) => match m.family() {
                Family::DetNet => "DetNet".into(),
                Family::FsNet => "FS-Net".into(),
                Family::OampNet2 => "OAMP-Net2".into(),
                Family::MmNet => "MMNet".into(),
                Family::MmNetIid => "MMNet-iid".into(),
            },
            Detector::Online { epochs, .. } => format!("MMNet-{epochs}"),
        }
    }

    /// Received vectors that share one channel realization.
    pub(crate) fn block(&self) -> usize {
        match self {
            Detector::Online { block, .. } => *block,
            _ => 1,
        }
    }

    /// Detects every column of `y`, all received through `h`.
    pub(crate) fn detect_block(
        &self,
        h: &ChannelMatrix,
        y: &Matrix,
        snr_db: f64,
        sigma2: f64,
        alphabet: &Alphabet,
        seed: u64,
    ) -> Result<BlockDecision> {
        let slice = |est: &Matrix| est.map(|t| alphabet.nearest(t));
        let check = |est: &Matrix| -> Result<()> {
            if est.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::NonFinite("detector output".into()))
            }
        };
        let hm = h.entries();
        let columns = |f: &dyn Fn(&nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>>| -> Result<Matrix> {
            let cols = y
                .column_iter()
                .map(|c| f(&c.into_owned()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Matrix::from_columns(&cols))
        };
        let decisions = match self {
            Detector::Linear(kind) => {
                let est = linear_filter(hm, *kind, sigma2, alphabet.real_energy())? * y;
                check(&est)?;
                slice(&est)
            }
            Detector::Ml => columns(&|c| crate::detectors::detect_ml(&DetectionProblem::new(hm, c, sigma2, alphabet)?))?,
            Detector::Sphere => {
                let sd = SphereDecoder::new(hm, alphabet)?;
                columns(&|c| Ok(sd.decode(c, InitialRadius::Babai)?.x))?
            }
            Detector::Oamp(layers) => {
                columns(&|c| oamp_detect(&DetectionProblem::new(hm, c, sigma2, alphabet)?, *layers))?
            }
            Detector::Network(m) => {
                let ctx = ChannelContext::new(hm.clone());
                let trace = forward(m, &ctx, y, sigma2)?;
                slice(trace.estimate())
            }
            Detector::Online {
                layers,
                epochs,
                batch_size,
                learning_rate,
                ..
            } => {
                let start = Instant::now();
                let cfg = OnlineConfig {
                    batch_size: *batch_size,
                    learning_rate: *learning_rate,
                    seed,
                    ..OnlineConfig::new(*layers, alphabet.scheme(), snr_db)
                };
                let trained = train_online_mmnet(h, &cfg, *epochs)?;
                let training_seconds = start.elapsed().as_secs_f64();
                let ctx = ChannelContext::new(hm.clone());
                let trace = forward(&trained.params, &ctx, y, sigma2)?;
                return Ok(BlockDecision {
                    decisions: slice(trace.estimate()),
                    training_seconds: Some(training_seconds),
                });
            }
        };
        Ok(BlockDecision {
            decisions,
            training_seconds: None,
        })
    }
}

/// Version string recorded in result metadata.
pub fn version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Serde helpers that write `+inf` SNR (the noiseless path) as `"inf"`.
pub(crate) mod snr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Text("inf".into())
        } else {
            Repr::Num(v)
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" || s == "+inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(E::custom(format!("invalid SNR {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|&x| to_repr(x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

#[cfg(test)]
mod tests;
