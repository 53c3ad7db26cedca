use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn rdgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn rd_solve_bernoulli_fixture() {
    let src = fixture("bernoulli_source.json");
    let dist = fixture("hamming2.json");
    let o = rdgen(&["rd", "solve", "--source", &src, "--dist", &dist, "--epsilon", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let hb = |x: f64| -(x * x.ln() + (1.0 - x) * (1.0 - x).ln());
    let rate = v["result"]["rate"].as_f64().unwrap();
    assert!((rate - (hb(0.3) - hb(0.1))).abs() < 1e-9);
}

#[test]
fn malformed_json_exits_2_with_position() {
    let o = rdgen(&["info", "entropy", "--config", &fixture("malformed.json")]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn invariant_failure_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"labels": ["a", "b"], "weights": [0.5, 0.6]}"#).unwrap();
    let o = rdgen(&["info", "entropy", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let o = rdgen(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"));
}

#[test]
fn infeasible_level_exits_2() {
    let src = fixture("bernoulli_source.json");
    let dist = fixture("hamming2.json");
    let o = rdgen(&["rd", "solve", "--source", &src, "--dist", &dist, "--epsilon", "-0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested").join("vc.csv");
    let cfg = fixture("vc.json");
    let a = rdgen(&["bound", "vc", "--config", &cfg, "--format", "csv"]);
    let b = rdgen(&["bound", "vc", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(stdout(&a), std::fs::read_to_string(&out).unwrap());
    assert!(stdout(&a).starts_with("quantity,value,unit\nvc_expectation,3.5491738"));
}

#[test]
fn sim_cover_reproducible_and_seeded() {
    let cfg = fixture("cover_bernoulli.json");
    let a = rdgen(&["sim", "cover", "--config", &cfg]);
    let b = rdgen(&["sim", "cover", "--config", &cfg]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let header = stdout(&a).lines().next().unwrap().to_string();
    assert_eq!(header, "m,error_freq,stderr,rate,epsilon,kind");
    let c = rdgen(&["sim", "cover", "--config", &cfg, "--seed", "8", "--trials", "300"]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(stdout(&c).lines().count(), 4);
}

#[test]
fn rd_curve_csv_columns() {
    let src = fixture("bernoulli_source.json");
    let dist = fixture("hamming2.json");
    let o = rdgen(&[
        "rd", "curve", "--source", &src, "--dist", &dist, "--points", "5", "--eps-min", "0.01", "--eps-max", "0.2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "epsilon,rate,slope");
    assert_eq!(rows.len(), 6);
    let rates: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn every_config_fixture_runs() {
    let cases: &[&[&str]] = &[
        &["info", "kl", "--config", "kl.json"],
        &["info", "mi", "--config", "joint.json"],
        &["bound", "expect", "--config", "expect_problem.json"],
        &["bound", "expect", "--config", "expect_gaussian_mean.json"],
        &["bound", "tail", "--config", "tail_problem.json"],
        &["bound", "cmi", "--config", "cmi_problem.json"],
        &["bound", "example", "--config", "example_gauss.json"],
        &["sim", "blocktail", "--config", "blocktail.json"],
        &["sim", "dv", "--config", "dv.json"],
        &["sim", "vartail", "--config", "vartail.json"],
        &["exp", "run", "--config", "problem_erm.json"],
    ];
    for case in cases {
        let mut args: Vec<String> = case.iter().map(|s| s.to_string()).collect();
        let last = args.len() - 1;
        args[last] = fixture(&args[last]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = rdgen(&refs);
        assert_eq!(o.status.code(), Some(0), "{case:?}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(v["result"].is_object() || v["result"].is_array(), "{case:?}");
    }
}

#[test]
fn gaussian_mean_fixture_is_exact() {
    let o = rdgen(&["bound", "expect", "--config", &fixture("expect_gaussian_mean.json")]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["value"].as_f64(), Some(0.02));
    assert!(v["result"]["provenance"]["bound"].is_string());
}

#[test]
fn json_numbers_round_trip() {
    let o = rdgen(&["rd", "dim"]);
    let text = stdout(&o);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let slope = v["result"]["slope"].as_f64().unwrap();
    let again = serde_json::to_string(&slope).unwrap();
    assert_eq!(again.parse::<f64>().unwrap(), slope);
    assert!((slope - 0.5).abs() < 1e-2);
}
