use nalgebra::DMatrix;

use super::*;
use crate::channel::sample_rayleigh;
use crate::modulation::Scheme;
use crate::unfolded::{Dims, Family, ForwardTrace};

fn trace_of(x_hat: Vec<Matrix>) -> ForwardTrace {
    let (rows, cols) = x_hat[0].shape();
    ForwardTrace {
        family: Family::DetNet,
        r: x_hat.clone(),
        x_hat,
        aux: Vec::new(),
        h: Matrix::zeros(rows, rows),
        y: Matrix::zeros(rows, cols),
        sigma2: 0.0,
    }
}

#[test]
fn detnet_loss_examples() {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    assert_eq!(detnet_loss(&trace_of(vec![x.clone(); 4]), &x).unwrap(), 0.0);
    let off = DMatrix::from_column_slice(2, 1, &[1.0 + 2.0, -1.0]);
    let l = detnet_loss(&trace_of(vec![x.clone(), off]), &x).unwrap();
    assert!((l - 4.0 * 2f64.ln()).abs() < 1e-15);
    assert!(detnet_loss(&trace_of(vec![x.clone()]), &x).is_err());
    assert!(detnet_loss(&trace_of(vec![x.clone(); 2]), &DMatrix::zeros(3, 1)).is_err());
}

#[test]
fn detnet_loss_matches_summation() {
    let x = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
    let layers: Vec<Matrix> = (0..5).map(|l| DMatrix::from_fn(4, 3, |i, j| ((i + j * 5 + l * 11) as f64).cos())).collect();
    let mut want = 0.0;
    for j in 0..3 {
        for (l, xl) in layers.iter().enumerate() {
            let w = ((l + 1) as f64).ln();
            for i in 0..4 {
                want += w * (x[(i, j)] - xl[(i, j)]).powi(2);
            }
        }
    }
    want /= 3.0;
    let got = detnet_loss(&trace_of(layers), &x).unwrap();
    assert!((got - want).abs() < 1e-12 * want.abs());
}

#[test]
fn fsnet_loss_examples() {
    let x = DMatrix::from_column_slice(4, 1, &[1.0, -3.0, 3.0, -1.0]);
    let log_sum: f64 = (1..=3).map(|l| (l as f64).ln()).sum();
    let same = trace_of(vec![x.clone(); 3]);
    assert!((fsnet_loss(&same, &x, 1.0).unwrap() + log_sum).abs() < 1e-12);
    let neg = trace_of(vec![-&x; 3]);
    let d = detnet_loss(&neg, &x).unwrap();
    assert!((fsnet_loss(&neg, &x, 1.0).unwrap() - (d + log_sum)).abs() < 1e-12);
    assert_eq!(fsnet_loss(&neg, &x, 0.0).unwrap(), d);
}

#[test]
fn fsnet_loss_drops_zero_estimates() {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
    let t = trace_of(vec![DMatrix::zeros(2, 1); 3]);
    assert_eq!(fsnet_loss(&t, &x, 1.0).unwrap(), detnet_loss(&t, &x).unwrap());
    assert!(fsnet_loss(&t, &DMatrix::zeros(2, 1), 1.0).is_err());
}

fn small_groups(users: usize, antennas: usize, count: usize, seed: u64) -> Vec<SampleGroup> {
    let cfg = TrainConfig {
        batch_size: count,
        seed,
        ..TrainConfig::new(Family::DetNet, users, antennas, 3, Scheme::Qpsk, [5.0, 15.0])
    };
    offline::training_batch(&cfg, 1).unwrap()
}

#[test]
fn dead_path_gradient_is_zero() {
    let dims = Dims::new(2, 4, 3);
    let m = ModelParams::zeros(Family::DetNet, dims, Scheme::Qpsk, crate::unfolded::Hyper::default_for(2, Scheme::Qpsk)).unwrap();
    let g = grad(&m, &small_groups(2, 4, 3, 1), LossKind::Weighted).unwrap();
    // The auxiliary output of the last layer feeds nothing.
    let last = m.specs().iter().position(|s| s.name == "b3[2]").unwrap();
    assert!(g.grads[last].iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_is_linear_in_the_loss_weight() {
    let dims = Dims::new(2, 4, 3);
    let m = ModelParams::init(Family::FsNet, dims, Scheme::Qpsk, 1, None).unwrap();
    let groups = small_groups(2, 4, 1, 2);
    let loss = LossKind::default_for(Family::FsNet);
    let (_, one) = group_gradient(&m, &groups[0], loss, 1.0).unwrap();
    let (_, two) = group_gradient(&m, &groups[0], loss, 2.0).unwrap();
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a * 2.0, *b);
    }
}

#[test]
fn gradient_is_independent_of_thread_count() {
    let m = ModelParams::init(Family::OampNet2, Dims::new(2, 4, 3), Scheme::Qpsk, 1, None).unwrap();
    let groups = small_groups(2, 4, 16, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| grad(&m, &groups, LossKind::Weighted).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn gradcheck_small_instances() {
    for family in Family::ALL {
        let cfg = GradcheckConfig::new(family, 2, 4, 3);
        let report = gradcheck(&cfg).unwrap();
        assert!(report.max_rel_error < 1e-5, "{family}: {:?}", report.worst);
    }
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![DMatrix::from_element(2, 2, 0.3)];
    let g = vec![DMatrix::zeros(2, 2)];
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
    assert_eq!(p[0], DMatrix::from_element(2, 2, 0.3));
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![DMatrix::from_column_slice(2, 1, &[1.0, 1.0])];
    let g = vec![DMatrix::from_column_slice(2, 1, &[0.5, -3.0])];
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &g, &mut s, &AdamConfig::with_lr(0.01)).unwrap();
    assert!((p[0][0] - 0.99).abs() < 1e-9);
    assert!((p[0][1] - 1.01).abs() < 1e-9);
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut p = vec![DMatrix::from_element(1, 1, 1.0)];
    let mut s = AdamState::new(&p);
    for _ in 0..100 {
        let g = vec![&p[0] * 2.0];
        adam_step(&mut p, &g, &mut s, &AdamConfig::with_lr(0.1)).unwrap();
    }
    assert!(p[0][(0, 0)].abs() < 0.05, "{}", p[0][(0, 0)]);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = vec![DMatrix::zeros(2, 1)];
    let mut s = AdamState::new(&p);
    assert!(adam_step(&mut p, &[DMatrix::zeros(1, 2)], &mut s, &AdamConfig::default()).is_err());
}

fn tiny_config(family: Family) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        iterations: 6,
        seed: 4,
        validation: Validation {
            every: 3,
            samples: 10,
            patience: None,
        },
        ..TrainConfig::new(family, 2, 4, 3, Scheme::Qpsk, [4.0, 12.0])
    }
}

#[test]
fn zero_iterations_returns_initialization() {
    let cfg = TrainConfig {
        iterations: 0,
        ..tiny_config(Family::DetNet)
    };
    let out = train_offline(&cfg).unwrap();
    let init = ModelParams::init(Family::DetNet, Dims::new(2, 4, 3), Scheme::Qpsk, 4, None).unwrap();
    assert_eq!(out.params, init);
    assert!(out.curve.is_empty());
}

#[test]
fn training_is_deterministic() {
    for family in [Family::DetNet, Family::FsNet, Family::OampNet2, Family::MmNetIid] {
        let a = train_offline(&tiny_config(family)).unwrap();
        let b = train_offline(&tiny_config(family)).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve.len(), 6);
        assert!(a.curve[2].val_ser.is_some() && a.curve[1].val_ser.is_none());
    }
}

#[test]
fn offline_rejects_mmnet_and_bad_settings() {
    assert!(train_offline(&tiny_config(Family::MmNet)).is_err());
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny_config(Family::FsNet)
    };
    assert!(matches!(train_offline(&cfg), Err(Error::InvalidArgument(_))));
}

#[test]
fn huge_learning_rate_reports_divergence_or_finishes() {
    let cfg = TrainConfig {
        learning_rate: 1e6,
        ..tiny_config(Family::MmNetIid)
    };
    match train_offline(&cfg) {
        Ok(out) => assert!(out.params.is_finite()),
        Err(Error::Diverged { losses, .. }) => assert!(losses.len() <= 6),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn curve_csv_has_header_and_rows() {
    let out = train_offline(&tiny_config(Family::FsNet)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    write_curve_csv(&out.curve, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,loss,val_ser");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].ends_with(','));
}

#[test]
fn online_zero_epochs_is_initialization() {
    let h = sample_rayleigh(2, 4, 1).unwrap();
    let cfg = OnlineConfig::new(3, Scheme::Qpsk, 10.0);
    let out = train_online_mmnet(&h, &cfg, 0).unwrap();
    let init = ModelParams::init(Family::MmNet, Dims::new(2, 4, 3), Scheme::Qpsk, 0, Some(h.entries())).unwrap();
    assert_eq!(out.params, init);
}

#[test]
fn online_training_reduces_loss() {
    let h = sample_rayleigh(2, 4, 1).unwrap();
    let cfg = OnlineConfig {
        batch_size: 64,
        learning_rate: 1e-2,
        ..OnlineConfig::new(3, Scheme::Qpsk, 8.0)
    };
    let out = train_online_mmnet(&h, &cfg, 60).unwrap();
    let head: f64 = out.losses[..10].iter().sum();
    let tail: f64 = out.losses[50..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}
