mod common;

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;

use common::{enumerated_mean, problem};
use mimo_detect::channel::{complex_to_real, complexify_vector, realify_matrix, realify_vector, ChannelModel};
use mimo_detect::detectors::{
    detect_ml, detect_sphere, objective, oamp_trajectory, posterior_moments, DetectionProblem,
};
use mimo_detect::harness::wilson_interval;
use mimo_detect::modulation::{Alphabet, Scheme, SoftQuantizer};
use mimo_detect::training::{grad, LossKind, SampleGroup};
use mimo_detect::unfolded::{oampnet2_forward, read_model, write_model, ChannelContext, Dims, Family, ModelParams};

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Bpsk), Just(Scheme::Qpsk), Just(Scheme::Qam16)]
}

fn complex_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<Complex<f64>>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), rows * cols)
        .prop_map(move |v| DMatrix::from_iterator(rows, cols, v.into_iter().map(|(re, im)| Complex::new(re, im))))
}

proptest! {
    #[test]
    fn realification_is_a_homomorphism(
        (hc, xc) in (1usize..6, 1usize..6).prop_flat_map(|(n, k)| (complex_matrix(n, k), complex_matrix(k, 1)))
    ) {
        let yc = &hc * &xc;
        let xc = xc.column(0).into_owned();
        let (h, y) = complex_to_real(&hc, &yc.column(0).into_owned()).unwrap();
        let lhs = h.entries() * realify_vector(&xc);
        prop_assert!((lhs - &y).amax() < 1e-12);
        prop_assert!(h.is_complex_structured(0.0));
        prop_assert_eq!(complexify_vector(&y).unwrap(), yc.column(0).into_owned());
    }

    #[test]
    fn realification_preserves_products(
        (a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, m, k)| (complex_matrix(n, m), complex_matrix(m, k)))
    ) {
        let lhs = realify_matrix(&(&a * &b));
        let rhs = realify_matrix(&a) * realify_matrix(&b);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn correlated_channels_stay_complex_structured(rho in 0.0..0.99f64, seed in any::<u64>()) {
        let h = ChannelModel::Kronecker { rho }.sample(3, 6, seed).unwrap();
        prop_assert!(h.is_complex_structured(1e-12));
        prop_assert_eq!(h.rho(), Some(rho));
    }

    #[test]
    fn denoiser_matches_enumeration(s in scheme(), r in -2.0..2.0f64, log_tau in -2.0..2.0f64) {
        let a = Alphabet::new(s);
        let tau2 = 10f64.powf(log_tau);
        let m = posterior_moments(r, tau2, a.levels());
        prop_assert!((m.mean - enumerated_mean(r, tau2, a.levels())).abs() < 1e-10);
        prop_assert!(m.mean >= a.min_level() && m.mean <= a.max_level());
        prop_assert!(m.variance >= 0.0);
    }

    #[test]
    fn sphere_decoder_is_maximum_likelihood(
        s in scheme(), users in 1usize..4, extra in 0usize..3, snr in -5.0..20.0f64, seed in any::<u64>()
    ) {
        let p = problem(users, users + extra, s, snr, seed);
        let dp = DetectionProblem::new(&p.h, &p.y, p.sigma2, &p.alphabet).unwrap();
        let ml = detect_ml(&dp).unwrap();
        let sd = detect_sphere(&dp, None).unwrap();
        if sd != ml {
            let (a, b) = (objective(&p.h, &p.y, &sd), objective(&p.h, &p.y, &ml));
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0), "sd {a} vs ml {b}");
        }
    }

    #[test]
    fn oampnet2_at_identity_parameters_is_oamp(
        s in scheme(), users in 1usize..5, layers in 1usize..6, snr in 0.0..25.0f64, seed in any::<u64>()
    ) {
        let p = problem(users, 2 * users, s, snr, seed);
        let m = ModelParams::init(Family::OampNet2, Dims::new(users, 2 * users, layers), s, 0, None).unwrap();
        let t = oampnet2_forward(&m, &p.h, &p.y, p.sigma2).unwrap();
        let dp = DetectionProblem::new(&p.h, &p.y, p.sigma2, &p.alphabet).unwrap();
        for (l, st) in oamp_trajectory(&dp, layers).unwrap().iter().enumerate() {
            prop_assert!((t.x_hat[l].column(0) - &st.x_hat).amax() < 1e-10);
            prop_assert!((t.aux[l][(0, 0)] - st.tau2).abs() < 1e-10 * st.tau2.max(1.0));
        }
    }

    #[test]
    fn soft_quantizer_is_odd_monotone_and_bounded(s in scheme(), t in -4.0..4.0f64, dt in 0.0..1.0f64) {
        let q = SoftQuantizer::with_default_width(Alphabet::new(s));
        let a = q.alphabet().max_level();
        prop_assert!((q.eval(t) + q.eval(-t)).abs() < 1e-12);
        prop_assert!(q.eval(t + dt) >= q.eval(t));
        prop_assert!(q.eval(t).abs() <= a + 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1u64..100_000, frac in 0.0..=1.0f64) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn model_files_round_trip_bitwise(seed in any::<u64>(), fam in 0usize..5, s in scheme()) {
        let family = Family::ALL[fam];
        let dims = Dims::new(2, 3, 2);
        let h = problem(2, 3, s, 10.0, seed).h;
        let m = ModelParams::init(family, dims, s, seed, Some(&h)).unwrap();
        let back = read_model(&write_model(&m).unwrap()).unwrap();
        prop_assert_eq!(back.tensors(), m.tensors());
        prop_assert_eq!(back.family(), family);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The batch gradient is the sample-weighted mean of per-group gradients.
    #[test]
    fn gradients_average_over_groups(fam in 0usize..5, seed in any::<u64>(), n1 in 1usize..4, n2 in 1usize..4) {
        let family = Family::ALL[fam];
        let dims = Dims::new(2, 4, 2);
        let group = |n: usize, tag: u64| {
            let ps: Vec<_> = (0..n).map(|i| problem(2, 4, Scheme::Qpsk, 8.0, seed ^ (tag << 8) ^ i as u64)).collect();
            let h = ps[0].h.clone();
            let x = DMatrix::from_columns(&ps.iter().map(|p| p.x.clone()).collect::<Vec<_>>());
            let y = &h * &x + DMatrix::from_fn(8, n, |i, j| 0.05 * ((i * 3 + j * 7) % 5) as f64 - 0.1);
            SampleGroup::new(Arc::new(ChannelContext::new(h)), y, x, ps[0].sigma2).unwrap()
        };
        let (g1, g2) = (group(n1, 1), group(n2, 2));
        let h0 = g1.ctx.h().clone();
        let m = ModelParams::init(family, dims, Scheme::Qpsk, seed, Some(&h0)).unwrap();
        let loss = LossKind::Weighted;
        let both = grad(&m, &[g1.clone(), g2.clone()], loss).unwrap();
        let a = grad(&m, &[g1], loss).unwrap();
        let b = grad(&m, &[g2], loss).unwrap();
        let w = (n1 as f64 / (n1 + n2) as f64, n2 as f64 / (n1 + n2) as f64);
        prop_assert!((both.loss - (w.0 * a.loss + w.1 * b.loss)).abs() < 1e-10 * both.loss.abs().max(1.0));
        for ((g, ga), gb) in both.grads.iter().zip(&a.grads).zip(&b.grads) {
            let expect = ga * w.0 + gb * w.1;
            prop_assert!((g - &expect).amax() < 1e-10 * expect.amax().max(1.0));
        }
    }
}

#[test]
fn complex_vector_round_trip() {
    let v = DVector::from_vec(vec![Complex::new(1.0, -2.0), Complex::new(0.5, 3.0)]);
    assert_eq!(complexify_vector(&realify_vector(&v)).unwrap(), v);
    assert!(complexify_vector(&DVector::from_vec(vec![1.0, 2.0, 3.0])).is_err());
}
