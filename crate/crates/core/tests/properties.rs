use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stiefel_core::cli::dataset::{read_dataset_from, write_dataset_to};
use stiefel_core::matfn::{h, h_inv, ln_gamma, log_0f1_ml, log_bessel_i, SeriesControl};
use stiefel_core::priors::{
    ccpd_log_kernel, ccpd_mode, jcpd_mode, posterior_update, sample_mean, CCPDParams, JCPDParams,
};
use stiefel_core::samplers::{build_proposal, CcpdStar, RejectionConfig};
use stiefel_core::stiefel::{
    compose, haar_sample, ml_logpdf, orthonormality_error, unique_svd, MLParams, StiefelPoint,
};

fn ctl() -> SeriesControl {
    SeriesControl::default()
}

fn lf(n: usize, d: &[f64]) -> f64 {
    log_0f1_ml(n, d, &ctl()).unwrap().ln()
}

// (n, d) with p in {2, 3} and moderate concentrations
fn conc() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..=3).prop_flat_map(|p| (p..=10usize, prop::collection::vec(0.05f64..20.0, p)))
}

fn sorted_desc(mut d: Vec<f64>) -> Vec<f64> {
    d.sort_by(|a, b| b.total_cmp(a));
    d
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalizer_is_below_etr((n, d) in conc()) {
        prop_assert!(lf(n, &d) <= d.iter().sum::<f64>() + 1e-10);
    }

    #[test]
    fn normalizer_is_above_the_trace_bessel_bound((n, d) in conc()) {
        let a = n as f64 / 2.0;
        let tr: f64 = d.iter().map(|x| 0.25 * x * x).sum();
        let bound = ln_gamma(a) + 0.5 * (1.0 - a) * tr.ln() + log_bessel_i(a - 1.0, 2.0 * tr.sqrt()).unwrap().ln();
        prop_assert!(lf(n, &d) >= bound - 1e-10 * bound.abs().max(1.0));
    }

    #[test]
    fn normalizer_is_log_convex((n, d1) in conc(), seed in 0u64..1000, lam in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d2: Vec<f64> = d1.iter().map(|_| 0.05 + 20.0 * rand::Rng::random::<f64>(&mut rng)).collect();
        let mid: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
        let chord = lam * lf(n, &d1) + (1.0 - lam) * lf(n, &d2);
        prop_assert!(lf(n, &mid) <= chord + 1e-9 * chord.abs().max(1.0));
    }

    #[test]
    fn h_lies_in_unit_interval((n, d) in conc()) {
        let hv = h(n, &d, &ctl()).unwrap();
        prop_assert!(hv.iter().all(|&x| x > 0.0 && x < 1.0), "{:?}", hv);
    }

    #[test]
    fn h_inverse_round_trips(n in 3usize..=8, d in prop::collection::vec(0.2f64..30.0, 2)) {
        let d = sorted_desc(d);
        prop_assume!(d[0] - d[1] > 1e-3);
        let eta = h(n, &d, &ctl()).unwrap();
        let back = h_inv(&eta, n, &ctl()).unwrap();
        for (x, y) in back.d.as_slice().iter().zip(&d) {
            prop_assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", back.d.as_slice(), d);
        }
    }

    // for n = 2 the entries of h(d) differ by about exp(-2 d_2), so only the
    // image is checked
    #[test]
    fn h_inverse_hits_eta_when_n_is_two(d in prop::collection::vec(0.2f64..12.0, 2)) {
        let d = sorted_desc(d);
        prop_assume!(d[0] - d[1] > 1e-3);
        let eta = h(2, &d, &ctl()).unwrap();
        if let Ok(back) = h_inv(&eta, 2, &ctl()) {
            let again = h(2, back.d.as_slice(), &ctl()).unwrap();
            prop_assert!(again.iter().zip(&eta).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn haar_points_are_frames(n in 1usize..8, k in 1usize..8, seed in any::<u64>()) {
        let p = k.min(n);
        let x = haar_sample(n, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(orthonormality_error(x.matrix()) < 1e-12);
        for c in x.matrix().column_iter() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn unique_svd_is_idempotent(n in 2usize..7, k in 1usize..4, seed in any::<u64>(), d in prop::collection::vec(0.1f64..50.0, 3)) {
        let p = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = haar_sample(n, p, &mut rng).unwrap().into_matrix();
        let b = haar_sample(p, p, &mut rng).unwrap().into_matrix();
        let f = compose(&a, &d[..p], &b);
        let s1 = unique_svd(&f).unwrap();
        prop_assert!(s1.m.matrix().row(0).iter().all(|&x| x >= -1e-12));
        prop_assert!(s1.d.windows(2).all(|w| w[0] >= w[1]));
        let f1 = compose(s1.m.matrix(), &s1.d, s1.v.matrix());
        prop_assert!((&f1 - &f).abs().max() < 1e-10 * f.abs().max().max(1.0));
        let s2 = unique_svd(&f1).unwrap();
        prop_assert!((s2.m.matrix() - s1.m.matrix()).abs().max() < 1e-8);
        prop_assert!((s2.v.matrix() - s1.v.matrix()).abs().max() < 1e-8);
    }

    #[test]
    fn logpdf_ignores_joint_sign_flips(seed in any::<u64>(), flip in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = haar_sample(4, 2, &mut rng).unwrap().into_matrix();
        let mut v = haar_sample(2, 2, &mut rng).unwrap().into_matrix();
        let d = [6.0, 2.5];
        let x = haar_sample(4, 2, &mut rng).unwrap();
        let theta = MLParams::from_f(&compose(&m, &d, &v)).unwrap();
        m.column_mut(flip).neg_mut();
        v.column_mut(flip).neg_mut();
        let flipped = MLParams::from_f(&compose(&m, &d, &v)).unwrap();
        let a = ml_logpdf(&x, &theta, &ctl()).unwrap();
        let b = ml_logpdf(&x, &flipped, &ctl()).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn sequential_updates_compose(seed in any::<u64>(), nu in 0.0f64..20.0, k1 in 1usize..15, k2 in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = haar_sample(3, 2, &mut rng).unwrap().into_matrix() * 0.5;
        let prior = JCPDParams::new(nu, psi).unwrap();
        let d1: Vec<StiefelPoint> = (0..k1).map(|_| haar_sample(3, 2, &mut rng).unwrap()).collect();
        let d2: Vec<StiefelPoint> = (0..k2).map(|_| haar_sample(3, 2, &mut rng).unwrap()).collect();
        let both: Vec<StiefelPoint> = d1.iter().chain(&d2).cloned().collect();
        let seq = posterior_update(&posterior_update(&prior, &d1).unwrap(), &d2).unwrap();
        let once = posterior_update(&prior, &both).unwrap();
        prop_assert!((seq.nu() - once.nu()).abs() < 1e-12);
        prop_assert!((seq.psi() - once.psi()).abs().max() < 1e-14);
        // convex combination of the prior modal parameter and the sample mean
        let w = nu / (nu + both.len() as f64);
        let want = prior.psi() * w + sample_mean(&both).unwrap() * (1.0 - w);
        prop_assert!((once.psi() - want).abs().max() < 1e-15);
    }

    #[test]
    fn sample_mean_ignores_order(seed in any::<u64>(), k in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<StiefelPoint> = (0..k).map(|_| haar_sample(3, 2, &mut rng).unwrap()).collect();
        let mut rev = data.clone();
        rev.reverse();
        prop_assert!((sample_mean(&data).unwrap() - sample_mean(&rev).unwrap()).abs().max() < 1e-15);
    }

    #[test]
    fn modes_do_not_depend_on_nu(seed in any::<u64>(), nu1 in 0.5f64..50.0, nu2 in 0.5f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = haar_sample(3, 2, &mut rng).unwrap().into_matrix();
        let psi = compose(&a, &[0.8, 0.4], &DMatrix::identity(2, 2));
        let m1 = jcpd_mode(&JCPDParams::new(nu1, psi.clone()).unwrap(), &ctl()).unwrap();
        let m2 = jcpd_mode(&JCPDParams::new(nu2, psi).unwrap(), &ctl()).unwrap();
        for (x, y) in m1.d.iter().zip(&m2.d) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let c1 = ccpd_mode(&CCPDParams::new(nu1, vec![0.7, 0.2], 4).unwrap(), &ctl()).unwrap();
        let c2 = ccpd_mode(&CCPDParams::new(nu2, vec![0.7, 0.2], 4).unwrap(), &ctl()).unwrap();
        prop_assert_eq!(c1, c2);
    }

    #[test]
    fn ccpd_kernel_is_concave_on_segments(x in prop::collection::vec(0.1f64..25.0, 2), y in prop::collection::vec(0.1f64..25.0, 2), lam in 0.05f64..0.95, eta in prop::collection::vec(-0.5f64..0.95, 2)) {
        let prior = CCPDParams::new(3.0, eta, 3).unwrap();
        let g = |d: &[f64]| ccpd_log_kernel(d, &prior, &ctl()).unwrap().ln();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let chord = lam * g(&x) + (1.0 - lam) * g(&y);
        prop_assert!(g(&mid) >= chord - 1e-9 * chord.abs().max(1.0));
    }

    #[test]
    fn proposal_dominates_and_normalizes(nu in 0.5f64..60.0, eta in -0.5f64..0.97, rest in 0.1f64..15.0, n in 2usize..6) {
        let prior = CCPDParams::new(nu, vec![eta, 0.1], n).unwrap();
        let cfg = RejectionConfig::default();
        let pieces = build_proposal(0, &[rest], &prior, &cfg, &ctl()).unwrap();
        prop_assert!((pieces.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(pieces.probs.iter().all(|&q| q >= 0.0));
        let mut target = CcpdStar::new(0, &[rest], &prior, &ctl()).unwrap();
        let top = pieces.m_crit * 1.5;
        for i in 1..=400 {
            let x = top * i as f64 / 400.0;
            let lg = target.log_kernel(x);
            prop_assert!(lg <= pieces.log_envelope(x) + 1e-9 * (1.0 + lg.abs()), "x={} lg={} env={}", x, lg, pieces.log_envelope(x));
        }
    }

    #[test]
    fn datasets_round_trip_bit_exactly(n in 1usize..6, k in 1usize..6, count in 1usize..30, seed in any::<u64>()) {
        let p = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<StiefelPoint> = (0..count).map(|_| haar_sample(n, p, &mut rng).unwrap()).collect();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &pts).unwrap();
        let back = read_dataset_from(&buf[..]).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(back.points, pts);
    }
}
