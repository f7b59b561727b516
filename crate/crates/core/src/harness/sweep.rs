use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{snr_serde, version, wilson_interval, ChannelSpec, Channels, Detector, DetectorSpec};
use crate::channel::{noise_variance, transmit_block};
use crate::error::{Error, Result};
use crate::modulation::{random_symbol_block, symbol_errors, Alphabet, Scheme};
use crate::rng::{self, stream};

/// Trials per stopping-rule check for single-vector blocks. Fixed so the
/// result never depends on scheduling.
const ROUND_TRIALS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub detector: DetectorSpec,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    pub alphabet: Scheme,
    #[serde(with = "snr_serde::vec")]
    pub snr_grid_db: Vec<f64>,
    #[serde(default = "default_min_errors")]
    pub min_errors: u64,
    /// Received vectors per SNR point at most.
    pub max_trials: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_errors() -> u64 {
    200
}

impl SweepSpec {
    pub fn new(detector: DetectorSpec, users: usize, antennas: usize, alphabet: Scheme, snr_grid_db: Vec<f64>, max_trials: u64) -> Self {
        Self {
            detector,
            channel: ChannelSpec::default(),
            users,
            antennas,
            alphabet,
            snr_grid_db,
            min_errors: default_min_errors(),
            max_trials,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.users == 0 || self.antennas == 0 {
            return bad(format!("need K, N >= 1, got K={}, N={}", self.users, self.antennas));
        }
        if self.snr_grid_db.is_empty() {
            return bad("snr_grid_db is empty".into());
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return bad(format!("invalid SNR grid {:?}", self.snr_grid_db));
        }
        if self.snr_grid_db.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("snr_grid_db must be increasing: {:?}", self.snr_grid_db));
        }
        if self.min_errors == 0 {
            return bad("min_errors must be >= 1".into());
        }
        if self.max_trials == 0 {
            return bad("max_trials must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the spec's JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub trials: u64,
    pub errors: u64,
    pub ser: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub detector: String,
    pub points: Vec<SweepPoint>,
    pub spec_hash: String,
    pub version: String,
    pub wall_clock_seconds: f64,
}

impl SweepResult {
    pub fn ser(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ser).collect()
    }
}

/// Symbol errors of one channel block.
fn run_block(
    spec: &SweepSpec,
    detector: &Detector,
    channels: &Channels,
    alphabet: &Alphabet,
    point: usize,
    block: u64,
    trials: u64,
) -> Result<u64> {
    let snr = spec.snr_grid_db[point];
    let seed = rng::derive_seed(spec.seed, &[stream::SWEEP, point as u64, block]);
    let first_trial = block * detector.block() as u64;
    let h = channels.draw(spec.users, spec.antennas, first_trial, rng::derive_seed(seed, &[stream::CHANNEL]))?;
    let sigma2 = noise_variance(spec.users, snr);
    let mut r = rng::child_rng(seed, &[stream::SYMBOLS]);
    let x = random_symbol_block(alphabet, 2 * spec.users, trials as usize, &mut r);
    let y = transmit_block(h.entries(), &x, sigma2, &mut r);
    let out = detector
        .detect_block(&h, &y, snr, sigma2, alphabet, rng::derive_seed(seed, &[stream::TRAIN]))
        .map_err(|e| Error::Trial {
            trial: first_trial,
            source: Box::new(e),
        })?;
    let mut errors = 0;
    for j in 0..x.ncols() {
        let d = out.decisions.column(j).into_owned();
        errors += symbol_errors(&d, &x.column(j).into_owned(), alphabet)? as u64;
    }
    Ok(errors)
}

/// Monte-Carlo SER curve. At every SNR point, trials run in fixed rounds
/// until `min_errors` symbol errors or `max_trials` vectors.
pub fn ser_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let start = Instant::now();
    let detector = Detector::prepare(&spec.detector, spec.users, spec.antennas, spec.alphabet)?;
    let channels = Channels::prepare(&spec.channel, spec.users, spec.antennas)?;
    let alphabet = Alphabet::new(spec.alphabet);
    let block = detector.block() as u64;
    let blocks_per_round = (ROUND_TRIALS / block).max(1);
    let mut points = Vec::with_capacity(spec.snr_grid_db.len());
    for (p, &snr_db) in spec.snr_grid_db.iter().enumerate() {
        let (mut trials, mut errors, mut next_block) = (0u64, 0u64, 0u64);
        while errors < spec.min_errors && trials < spec.max_trials {
            let jobs: Vec<(u64, u64)> = (next_block..next_block + blocks_per_round)
                .map(|b| (b, block.min(spec.max_trials.saturating_sub(b * block))))
                .take_while(|&(_, n)| n > 0)
                .collect();
            next_block += jobs.len() as u64;
            let counts = jobs
                .par_iter()
                .map(|&(b, n)| run_block(spec, &detector, &channels, &alphabet, p, b, n))
                .collect::<Result<Vec<u64>>>()?;
            errors += counts.iter().sum::<u64>();
            trials += jobs.iter().map(|&(_, n)| n).sum::<u64>();
        }
        let symbols = trials * spec.users as u64;
        let (lo95, hi95) = wilson_interval(errors, symbols);
        points.push(SweepPoint {
            snr_db,
            trials,
            errors,
            ser: errors as f64 / symbols as f64,
            lo95,
            hi95,
        });
    }
    Ok(SweepResult {
        spec: spec.clone(),
        detector: detector.label(),
        points,
        spec_hash: spec.hash(),
        version: version(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}
