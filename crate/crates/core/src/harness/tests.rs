use nalgebra::DMatrix;
use rand::Rng as _;

use super::*;
use crate::channel::{noise_variance, sample_rayleigh, transmit_block, write_channels, ChannelFileEncoding};
use crate::modulation::{random_symbol_block, symbol_errors};
use crate::rng::{self, stream};
use crate::unfolded::save_model;

fn spec(detector: DetectorSpec, grid: Vec<f64>) -> SweepSpec {
    SweepSpec {
        min_errors: 50,
        seed: 11,
        ..SweepSpec::new(detector, 2, 4, Scheme::Qpsk, grid, 2000)
    }
}

#[test]
fn noiseless_zero_forcing_is_error_free() {
    let s = SweepSpec {
        antennas: 8,
        max_trials: 300,
        ..spec(DetectorSpec::Zf, vec![f64::INFINITY])
    };
    let r = ser_sweep(&s).unwrap();
    assert_eq!(r.points[0].errors, 0);
    assert_eq!(r.points[0].trials, 300);
    assert_eq!(r.points[0].ser, 0.0);
}

#[test]
fn lmmse_matches_straight_line_reimplementation() {
    let s = spec(DetectorSpec::Lmmse, vec![0.0]);
    let got = ser_sweep(&s).unwrap().points[0].clone();

    let alphabet = Alphabet::new(Scheme::Qpsk);
    let sigma2 = noise_variance(2, 0.0);
    let (mut trials, mut errors) = (0u64, 0u64);
    while errors < s.min_errors && trials < s.max_trials {
        for _ in 0..64 {
            let seed = rng::derive_seed(s.seed, &[stream::SWEEP, 0, trials]);
            let h = crate::channel::ChannelModel::IidRayleigh
                .sample(2, 4, rng::derive_seed(seed, &[stream::CHANNEL]))
                .unwrap()
                .into_entries();
            let mut r = rng::child_rng(seed, &[stream::SYMBOLS]);
            let x = random_symbol_block(&alphabet, 4, 1, &mut r);
            let y = transmit_block(&h, &x, sigma2, &mut r);
            let a = h.transpose() * &h + DMatrix::identity(4, 4) * (sigma2 / alphabet.real_energy());
            let est = a.try_inverse().unwrap() * h.transpose() * y;
            let d = est.map(|t| if t < 0.0 { alphabet.levels()[0] } else { alphabet.levels()[1] });
            errors += symbol_errors(&d.column(0).into_owned(), &x.column(0).into_owned(), &alphabet).unwrap() as u64;
            trials += 1;
        }
    }
    assert_eq!((got.trials, got.errors), (trials, errors));
}

#[test]
fn ser_decreases_with_snr() {
    let r = ser_sweep(&spec(DetectorSpec::Lmmse, vec![0.0, 5.0, 10.0])).unwrap();
    for w in r.points.windows(2) {
        assert!(w[1].ser <= w[0].ser || w[1].lo95 <= w[0].hi95);
    }
    for p in &r.points {
        assert!(p.lo95 <= p.ser && p.ser <= p.hi95);
        assert!(p.errors >= 50 || p.trials == 2000);
    }
}

#[test]
fn sweep_is_reproducible_across_thread_counts() {
    let s = spec(DetectorSpec::Untrained { family: Family::OampNet2, layers: 3 }, vec![2.0, 6.0]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ser_sweep(&s).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.points, b.points);
    assert_eq!(a.spec_hash, b.spec_hash);
}

#[test]
fn results_round_trip_and_replay() {
    let r = ser_sweep(&spec(DetectorSpec::Lmmse, vec![0.0, f64::INFINITY])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    write_results(&r, &json, OutputFormat::Json).unwrap();
    let back = read_results(&json).unwrap();
    assert_eq!(back, r);
    let replay = ser_sweep(&back.spec).unwrap();
    assert_eq!(replay.ser(), r.ser());

    let csv = dir.path().join("r.csv");
    write_results(&r, &csv, OutputFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "snr_db,trials,errors,ser,lo95,hi95");
}

#[test]
fn spec_validation() {
    assert!(ser_sweep(&spec(DetectorSpec::Lmmse, vec![])).is_err());
    assert!(ser_sweep(&spec(DetectorSpec::Lmmse, vec![5.0, 0.0])).is_err());
    let s = SweepSpec {
        min_errors: 0,
        ..spec(DetectorSpec::Lmmse, vec![0.0])
    };
    assert!(ser_sweep(&s).unwrap_err().is_validation());
}

#[test]
fn wilson_interval_calibration() {
    let mut r = rng::rng(5);
    for &p in &[0.01, 0.1, 0.4] {
        let n = 2000u64;
        let covered = (0..1000)
            .filter(|_| {
                let k = (0..n).filter(|_| r.random::<f64>() < p).count() as u64;
                let (lo, hi) = wilson_interval(k, n);
                lo <= p && p <= hi
            })
            .count();
        assert!(covered >= 930, "p = {p}: {covered}");
    }
    assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    let (lo, hi) = wilson_interval(0, 100);
    assert_eq!(lo, 0.0);
    assert!(hi > 0.0 && hi < 0.05);
}

#[test]
fn model_detector_must_match_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = ModelParams::init(Family::FsNet, Dims::new(2, 6, 3), Scheme::Qpsk, 0, None).unwrap();
    save_model(&path, &m).unwrap();
    let err = ser_sweep(&spec(DetectorSpec::Model { path: path.clone() }, vec![0.0])).unwrap_err();
    assert!(matches!(err, Error::ModelMismatch(_)));
    let ok = SweepSpec {
        antennas: 6,
        ..spec(DetectorSpec::Model { path }, vec![0.0])
    };
    assert_eq!(ser_sweep(&ok).unwrap().detector, "FS-Net");
    let missing = spec(DetectorSpec::Model { path: "nope.json".into() }, vec![0.0]);
    let err = ser_sweep(&missing).unwrap_err();
    assert!(err.is_validation() && err.to_string().contains("nope.json"));
}

#[test]
fn channel_file_source_cycles_realizations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.json");
    let list: Vec<_> = (0..3).map(|i| sample_rayleigh(2, 4, i).unwrap()).collect();
    std::fs::write(&path, write_channels(&list, ChannelFileEncoding::Base64).unwrap()).unwrap();
    let s = SweepSpec {
        channel: ChannelSpec::File { path: path.clone() },
        ..spec(DetectorSpec::Lmmse, vec![4.0])
    };
    let r = ser_sweep(&s).unwrap();
    assert!(r.points[0].trials > 0);
    let wrong = SweepSpec {
        antennas: 5,
        channel: ChannelSpec::File { path },
        ..spec(DetectorSpec::Lmmse, vec![4.0])
    };
    assert!(matches!(ser_sweep(&wrong), Err(Error::Dimension(_))));
}

#[test]
fn online_mmnet_sweep_uses_channel_blocks() {
    let s = SweepSpec {
        max_trials: 60,
        ..spec(
            DetectorSpec::MmnetOnline {
                layers: 2,
                epochs: 3,
                block: 25,
                batch_size: 16,
                learning_rate: 1e-3,
            },
            vec![5.0],
        )
    };
    let r = ser_sweep(&s).unwrap();
    assert_eq!(r.detector, "MMNet-3");
    assert!(r.points[0].trials == 60 || r.points[0].errors >= 50);
}

#[test]
fn bench_reports_per_vector_times() {
    let b = BenchSpec {
        detectors: vec![
            DetectorSpec::Lmmse,
            DetectorSpec::Sphere,
            DetectorSpec::Untrained { family: Family::DetNet, layers: 2 },
            DetectorSpec::MmnetOnline {
                layers: 2,
                epochs: 2,
                block: 1000,
                batch_size: 8,
                learning_rate: 1e-3,
            },
        ],
        batch: 20,
        warmup: 1,
        ..BenchSpec::preset("table1-qpsk").unwrap()
    };
    let b = BenchSpec { users: 2, antennas: 4, ..b };
    let t = runtime_bench(&b).unwrap();
    assert_eq!(t.len(), 4);
    for r in &t {
        assert!(r.mean_seconds > 0.0 && r.samples == 30);
    }
    assert!(t[3].training_seconds.is_some() && t[0].training_seconds.is_none());
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    write_timings(&t, &csv, OutputFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "alphabet,LMMSE,SD,DetNet,MMNet-2");
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn bench_rejects_few_reps_and_unknown_presets() {
    let b = BenchSpec {
        reps: 10,
        ..BenchSpec::preset("table1-qam16").unwrap()
    };
    assert!(runtime_bench(&b).is_err());
    assert!(BenchSpec::preset("table2").is_err());
}
