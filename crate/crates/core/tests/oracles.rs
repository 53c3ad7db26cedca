use rdgen_core::bounds::*;
use rdgen_core::covering_sim::{verify_block_tail, Quantizer};
use rdgen_core::harness::{exact_gen_stats, shipped_problems, FiniteProblem};
use rdgen_core::infocore::{binary_entropy, ProbVec};
use rdgen_core::rd_solver::*;
use rdgen_core::suite::{brute_force_rd_3x3, equality_block_tail};

fn hb(x: f64) -> f64 {
    -(x * x.ln() + (1.0 - x) * (1.0 - x).ln())
}

#[test]
fn binary_hamming_matches_closed_form() {
    let opts = BaOptions::default();
    for (p, d) in [(0.5, 0.11), (0.3, 0.1), (0.2, 0.05), (0.4, 0.3)] {
        let pt = rd_at_distortion(
            &ProbVec::bernoulli(p).unwrap(),
            &DistortionMatrix::hamming(2),
            Constraint::Upper { epsilon: d },
            &opts,
        )
        .unwrap();
        assert!((pt.rate - (hb(p) - hb(d))).abs() < 1e-9, "p={p} d={d}: {}", pt.rate);
        assert!((binary_entropy(p).unwrap() - hb(p)).abs() < 1e-15);
    }
}

#[test]
fn solver_never_above_channel_grid() {
    let p = vec![0.5, 0.3, 0.2];
    let d = vec![vec![0.0, 0.7, 0.4], vec![0.6, 0.1, 0.9], vec![0.3, 0.5, 0.2]];
    let src = ProbVec::from_weights(p.clone()).unwrap();
    let dm = DistortionMatrix::from_cells(d.clone()).unwrap();
    let eps = 0.2;
    let ba = rd_at_distortion(&src, &dm, Constraint::Upper { epsilon: eps }, &BaOptions::default()).unwrap();
    assert!(ba.distortion <= eps + 1e-9);
    let coarse = brute_force_rd_3x3(&p, &d, eps, 20).unwrap();
    let fine = brute_force_rd_3x3(&p, &d, eps, 50).unwrap();
    assert!(ba.rate <= fine + 1e-9);
    assert!(fine <= coarse + 1e-12);
    // refinement closes in on the solver
    assert!(fine - ba.rate <= coarse - ba.rate);
}

#[test]
fn shipped_bounds_dominate_exact_expectation() {
    let opts = BaOptions::default();
    for problem in shipped_problems() {
        let truth = exact_gen_stats(&problem).unwrap().exact_mean_gen.abs();
        let lossless = lossless_mi_bound(&problem).unwrap().value;
        let two_sided = exact_expectation_bound(&problem, EpsStrategy::Minimize, ExpectVariant::TwoSided, &opts)
            .unwrap()
            .value;
        assert!(truth <= lossless + 1e-9);
        assert!(truth <= two_sided + 1e-9, "{:?}", problem.name);
    }
}

#[test]
fn problem_json_round_trip() {
    for problem in shipped_problems() {
        let s = serde_json::to_string(&problem).unwrap();
        let back: FiniteProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(back, problem);
    }
}

#[test]
fn block_tail_equality_in_closed_form() {
    for m in [1, 4, 10] {
        let cfg = equality_block_tail(m, 1000, 5);
        let ex = verify_block_tail(&cfg).unwrap().exact.unwrap();
        let want = 0.5f64.powi(m as i32);
        assert_eq!(ex.lhs, want);
        assert_eq!(ex.rhs, want);
    }
    let mut cfg = equality_block_tail(3, 1000, 5);
    cfg.quantizer = Quantizer::Constant { values: vec![0.5] };
    let ex = verify_block_tail(&cfg).unwrap().exact.unwrap();
    assert!(ex.rhs >= ex.lhs);
}

#[test]
fn vc_expectation_formula() {
    let (d, n) = (10.0f64, 1000.0f64);
    let oracle = (2.0 * d * (2.0 * std::f64::consts::E * n / d).ln() / n).sqrt();
    let rep = vc_bounds(d, n, 0.05, VcWhich::Expectation).unwrap();
    assert!((rep.value - oracle).abs() < 1e-15);
    assert!((rep.value - 0.354917381).abs() < 1e-9);
}
