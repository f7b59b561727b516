use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::results::csv_text;
use super::{ChannelSpec, Channels, Detector, DetectorSpec, OutputFormat};
use crate::channel::{noise_variance, transmit_block};
use crate::error::{Error, Result};
use crate::modulation::{random_symbol_block, Alphabet, Scheme};
use crate::rng::{self, stream};
use crate::unfolded::Family;

/// Coefficient of variation above which a timing is flagged as noisy.
pub const CV_LIMIT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub detectors: Vec<DetectorSpec>,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    pub alphabet: Scheme,
    pub snr_db: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Received vectors per timed run, all sharing one channel.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelSpec,
}

fn default_reps() -> usize {
    30
}
fn default_batch() -> usize {
    1000
}
fn default_warmup() -> usize {
    2
}

impl BenchSpec {
    /// Runtime-table presets at `(K, N) = (16, 32)`: `table1-qpsk` (L = 10) and
    /// `table1-qam16` (L = 15).
    pub fn preset(name: &str) -> Result<Self> {
        let (alphabet, layers, snr_db) = match name {
            "table1-qpsk" => (Scheme::Qpsk, 10, 8.0),
            "table1-qam16" => (Scheme::Qam16, 15, 16.0),
            other => return Err(Error::InvalidArgument(format!("unknown bench preset {other:?}"))),
        };
        let untrained = |family| DetectorSpec::Untrained { family, layers };
        Ok(Self {
            detectors: vec![
                DetectorSpec::Lmmse,
                untrained(Family::FsNet),
                untrained(Family::MmNetIid),
                untrained(Family::OampNet2),
                untrained(Family::DetNet),
                DetectorSpec::Sphere,
                DetectorSpec::mmnet_online(layers, 10),
                DetectorSpec::mmnet_online(layers, 100),
                DetectorSpec::mmnet_online(layers, 500),
            ],
            users: 16,
            antennas: 32,
            alphabet,
            snr_db,
            reps: default_reps(),
            batch: default_batch(),
            warmup: default_warmup(),
            seed: 0,
            channel: ChannelSpec::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::InvalidArgument("no detectors to benchmark".into()));
        }
        if self.reps < 30 {
            return Err(Error::InvalidArgument(format!("reps must be >= 30, got {}", self.reps)));
        }
        if self.batch == 0 || self.users == 0 || self.antennas == 0 {
            return Err(Error::InvalidArgument("batch, K and N must be >= 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidArgument("snr_db is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub detector: String,
    pub alphabet: Scheme,
    /// Mean wall-clock seconds per received vector, including per-channel
    /// preprocessing and, for online MMNet, training.
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub cv: f64,
    pub samples: usize,
    /// Mean training seconds per channel, for online MMNet.
    pub training_seconds: Option<f64>,
    /// Whether `cv` exceeds [`CV_LIMIT`].
    pub noisy: bool,
}

/// Times batched detection: each repetition draws a channel and `batch`
/// received vectors, then detects them all.
pub fn runtime_bench(spec: &BenchSpec) -> Result<Vec<TimingResult>> {
    spec.validate()?;
    let alphabet = Alphabet::new(spec.alphabet);
    let channels = Channels::prepare(&spec.channel, spec.users, spec.antennas)?;
    let sigma2 = noise_variance(spec.users, spec.snr_db);
    let mut out = Vec::with_capacity(spec.detectors.len());
    for (d, dspec) in spec.detectors.iter().enumerate() {
        let detector = Detector::prepare(dspec, spec.users, spec.antennas, spec.alphabet)?;
        let mut times = Vec::with_capacity(spec.reps);
        let mut training = Vec::new();
        for rep in 0..spec.warmup + spec.reps {
            let seed = rng::derive_seed(spec.seed, &[stream::BENCH, d as u64, rep as u64]);
            let h = channels.draw(spec.users, spec.antennas, rep as u64, rng::derive_seed(seed, &[stream::CHANNEL]))?;
            let mut r = rng::child_rng(seed, &[stream::SYMBOLS]);
            let x = random_symbol_block(&alphabet, 2 * spec.users, spec.batch, &mut r);
            let y = transmit_block(h.entries(), &x, sigma2, &mut r);
            let start = Instant::now();
            let block = detector.detect_block(&h, &y, spec.snr_db, sigma2, &alphabet, seed)?;
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(&block.decisions);
            if rep >= spec.warmup {
                times.push(elapsed / spec.batch as f64);
                training.extend(block.training_seconds);
            }
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        let cv = std / mean;
        out.push(TimingResult {
            detector: detector.label(),
            alphabet: spec.alphabet,
            mean_seconds: mean,
            std_seconds: std,
            cv,
            samples: times.len(),
            training_seconds: (!training.is_empty()).then(|| training.iter().sum::<f64>() / training.len() as f64),
            noisy: cv >= CV_LIMIT,
        });
    }
    Ok(out)
}

/// Renders timings as JSON, or as a runtime-table CSV: one row per
/// alphabet, one column of mean seconds per detector.
pub fn render_timings(results: &[TimingResult], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(results)?),
        OutputFormat::Csv => {
            let mut labels: Vec<&str> = Vec::new();
            for r in results {
                if !labels.contains(&r.detector.as_str()) {
                    labels.push(&r.detector);
                }
            }
            let mut rows: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for r in results {
                let row = rows
                    .entry(r.alphabet.to_string())
                    .or_insert_with(|| vec![String::new(); labels.len()]);
                let col = labels.iter().position(|l| *l == r.detector).expect("label collected");
                row[col] = format!("{:e}", r.mean_seconds);
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(std::iter::once("alphabet").chain(labels.iter().copied()))?;
            for (alphabet, row) in rows {
                w.write_record(std::iter::once(alphabet).chain(row))?;
            }
            csv_text(w)
        }
    }
}

pub fn write_timings(results: &[TimingResult], path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let path = path.as_ref();
    let text = render_timings(results, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
