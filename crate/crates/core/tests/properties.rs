use proptest::prelude::*;
use rdgen_core::bounds::{expectation_bound, BoundInput};
use rdgen_core::covering_sim::{
    block_distortion, dv_check, simulate_covering, CodebookSource, CoverConfig, CoverSource, DistortionKind, Engine,
};
use rdgen_core::harness::shipped_two_by_two;
use rdgen_core::infocore::*;
use rdgen_core::rd_solver::*;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), r)
}

fn rd_range(p: &[f64], d: &[Vec<f64>]) -> (f64, f64) {
    let dmin: f64 = p
        .iter()
        .zip(d)
        .map(|(px, row)| px * row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    let dmax = (0..d[0].len())
        .map(|j| p.iter().zip(d).map(|(px, row)| px * row[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (dmin, dmax)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_between_zero_and_log_k(w in (2usize..8).prop_flat_map(simplex)) {
        let k = w.len();
        let h = entropy(&ProbVec::from_weights(w).unwrap());
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (k as f64).ln() + 1e-12);
    }

    #[test]
    fn gibbs_inequality(pair in (2usize..6).prop_flat_map(|k| (simplex(k), simplex(k)))) {
        let (q, p) = pair;
        let q = ProbVec::from_weights(q).unwrap();
        let p = ProbVec::from_weights(p).unwrap();
        prop_assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-14);
    }

    #[test]
    fn mutual_information_is_kl_to_product(p in simplex(3), rows in prop::collection::vec(simplex(4), 3)) {
        let ch = Channel::new(index_labels(3), index_labels(4), rows.clone()).unwrap();
        let src = ProbVec::from_weights(p.clone()).unwrap();
        let j = ch.joint(&src).unwrap();
        let prod = JointTable::product(&j.row_marginal(), &j.col_marginal());
        let kl = kl_of(&j.flat(), &prod.flat());
        let mi = mutual_information(&j);
        prop_assert!((mi - kl).abs() < 1e-12);
        prop_assert!((channel_mutual_information(&p, &rows) - kl).abs() < 1e-12);
    }

    #[test]
    fn rate_invariant_under_distortion_shift(
        p in simplex(3), d in matrix(3, 3), u in 0.2f64..0.8, c in -2.0f64..2.0,
    ) {
        let (lo, hi) = rd_range(&p, &d);
        prop_assume!(hi - lo > 1e-3);
        let eps = lo + u * (hi - lo);
        let src = ProbVec::from_weights(p).unwrap();
        let dm = DistortionMatrix::from_cells(d).unwrap();
        let opts = BaOptions::default();
        let a = rd_at_distortion(&src, &dm, Constraint::Upper { epsilon: eps }, &opts).unwrap();
        let b = rd_at_distortion(&src, &dm.shifted(c), Constraint::Upper { epsilon: eps + c }, &opts).unwrap();
        prop_assert!((a.rate - b.rate).abs() < 1e-7, "{} vs {}", a.rate, b.rate);
    }

    #[test]
    fn rd_curve_nonincreasing_and_convex(p in simplex(3), d in matrix(3, 3)) {
        let (lo, hi) = rd_range(&p, &d);
        prop_assume!(hi - lo > 1e-2);
        let levels: Vec<f64> = (0..9).map(|i| lo + (hi - lo) * (0.05 + 0.1125 * i as f64)).collect();
        let src = ProbVec::from_weights(p).unwrap();
        let dm = DistortionMatrix::from_cells(d).unwrap();
        let curve = rd_curve(&src, &dm, &levels, &BaOptions::default()).unwrap();
        let r: Vec<f64> = curve.points.iter().map(|pt| pt.rate).collect();
        for w in r.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-8);
        }
        // equally spaced levels: second differences are nonnegative
        for w in r.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-7, "{:?}", r);
        }
    }

    #[test]
    fn expectation_bound_monotone(
        rate in 0.0f64..2.0, sigma in 0.1f64..3.0, n in 1.0f64..1e4, eps in 0.0f64..0.5, f in 1.01f64..3.0,
    ) {
        let base = expectation_bound(rate, BoundInput::new(sigma, n, 0.1, eps), false).unwrap().value;
        let more_sigma = expectation_bound(rate, BoundInput::new(sigma * f, n, 0.1, eps), false).unwrap().value;
        let more_rate = expectation_bound(rate * f + 0.01, BoundInput::new(sigma, n, 0.1, eps), false).unwrap().value;
        let more_n = expectation_bound(rate, BoundInput::new(sigma, n * f, 0.1, eps), false).unwrap().value;
        prop_assert!(more_sigma >= base);
        prop_assert!(more_rate >= base);
        prop_assert!(more_n <= base);
    }

    #[test]
    fn phi_never_exceeds_theta(
        pair in (1usize..12).prop_flat_map(|m| (
            prop::collection::vec(-1.0f64..1.0, m),
            prop::collection::vec(-1.0f64..1.0, m),
        )),
    ) {
        let (a, b) = pair;
        let phi = block_distortion(DistortionKind::Phi, &a, &b).unwrap();
        let theta = block_distortion(DistortionKind::Theta, &a, &b).unwrap();
        prop_assert!(phi <= theta + 1e-15);
    }

    #[test]
    fn dv_gap_nonnegative_and_shift_free(
        t in (2usize..6).prop_flat_map(|k| (simplex(k), simplex(k), prop::collection::vec(-3.0f64..3.0, k))),
    ) {
        let (p, q, phi) = t;
        let p = ProbVec::from_weights(p).unwrap();
        let q = ProbVec::from_weights(q).unwrap();
        let rep = dv_check(&p, &q, &phi, 21).unwrap();
        prop_assert!(rep.gap >= -1e-12);
        prop_assert!(rep.optimizer_gap.abs() < 1e-12);
        prop_assert!(rep.shift_max_deviation < 1e-9);
    }
}

fn bernoulli_cover(rate: f64, epsilon: f64, seed: u64) -> CoverConfig {
    CoverConfig {
        source: CoverSource::Source {
            p: ProbVec::bernoulli(0.5).unwrap(),
            dist: DistortionMatrix::hamming(2),
        },
        rate,
        epsilon,
        m_values: vec![10, 20],
        trials: 200,
        seed,
        codebook: CodebookSource::Uniform,
        engine: Engine::Ensemble,
    }
}

#[test]
fn covering_error_monotone_in_rate_and_level() {
    let opts = BaOptions::default();
    let log_err = |rate: f64, eps: f64| {
        simulate_covering(&bernoulli_cover(rate, eps, 3), &opts)
            .unwrap()
            .exact_log_error_prob
            .unwrap()
    };
    let base = log_err(0.3, 0.2);
    let higher_rate = log_err(0.4, 0.2);
    let looser = log_err(0.3, 0.25);
    for i in 0..base.len() {
        assert!(higher_rate[i] <= base[i] + 1e-12);
        assert!(looser[i] <= base[i] + 1e-12);
    }
}

#[test]
fn covering_reproducible_for_fixed_seed() {
    let opts = BaOptions::default();
    let mut cfg = bernoulli_cover(0.2, 0.2, 11);
    cfg.engine = Engine::Explicit;
    let a = simulate_covering(&cfg, &opts).unwrap();
    let b = simulate_covering(&cfg, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn marton_sup_grows_as_delta_shrinks() {
    let problem = shipped_two_by_two().into_iter().next().unwrap();
    let joint = rdgen_core::harness::enumerate_joint(&problem).unwrap();
    let gen = problem.gen_table();
    let opts = BaOptions::default();
    let mut last = -1.0;
    for delta in [0.9, 0.5, 0.2, 0.05] {
        let r = marton_sup(&joint, &gen, 0.05, delta, MartonMethod::Grid { step: 0.05 }, &opts).unwrap();
        assert!(r.rate >= last - 1e-9, "delta {delta}: {} < {last}", r.rate);
        last = r.rate;
    }
}
