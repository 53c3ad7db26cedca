//! Acceptance suite: one line per criterion.
//!
//! Criteria 2, 4 and 10 are known red (see README); they are run and reported
//! like every other criterion but do not fail the target. Any other failure,
//! an exceeded time budget, or a known-red criterion turning green does.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rdgen_core::suite::{run_criterion, SuiteConfig};

const KNOWN_RED: [usize; 3] = [2, 4, 10];

fn budget(id: usize) -> Option<Duration> {
    match id {
        1 => Some(Duration::from_secs(5)),
        2 => Some(Duration::from_secs(60)),
        4 => Some(Duration::from_secs(120)),
        _ => None,
    }
}

fn suite_run(dir: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_rdgen"))
        .args(["suite", "run", "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("artifact dir")
        .map(|e| {
            let e = e.expect("entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("artifact"),
            )
        })
        .collect();
    files.sort();
    files
}

/// `suite run` twice into separate directories; every artifact must match byte for byte.
fn reproducibility() -> (bool, String) {
    let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    if let Err(e) = suite_run(a.path()).and_then(|_| suite_run(b.path())) {
        return (false, format!("suite run failed: {e}"));
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let same = sa == sb;
    (same, format!("{} artifacts from two `suite run` invocations byte-identical: {same}", sa.len()))
}

fn main() -> ExitCode {
    let cfg = SuiteConfig::default();
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for id in 1..=10 {
        let t = Instant::now();
        let (pass, line) = match run_criterion(id, &cfg) {
            Ok(r) => (r.pass, r.line()),
            Err(e) => (false, format!("criterion {id:2} [FAIL] error: {e}")),
        };
        let took = t.elapsed();
        let in_time = budget(id).is_none_or(|b| took <= b);
        let note = match budget(id) {
            Some(b) => format!(" ({:.1}s, budget {}s)", took.as_secs_f64(), b.as_secs()),
            None => format!(" ({:.1}s)", took.as_secs_f64()),
        };
        println!("{line}{note}");
        if pass && in_time {
            passed += 1;
        }
        if !in_time || pass == KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    let (pass, summary) = reproducibility();
    println!("criterion 11 [{}] reproducibility: {summary}", if pass { "PASS" } else { "FAIL" });
    if pass {
        passed += 1;
    } else {
        unexpected.push(11);
    }
    println!("{passed}/11 criteria passed; known red: {KNOWN_RED:?}");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome on criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
