//! Browser bindings for the demo page in `www/`. Every export returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rdgen_core::bounds::{gaussian_mean_example, BoundInput, EpsStrategy};
use rdgen_core::covering_sim::{simulate_covering, CodebookSource, CoverConfig, CoverSource, Engine};
use rdgen_core::infocore::{binary_entropy, ProbVec};
use rdgen_core::rd_solver::{rd_at_distortion, BaOptions, Constraint, DistortionMatrix};
use rdgen_core::Result;

#[derive(Serialize)]
struct CurvePoint {
    epsilon: f64,
    rate: f64,
    closed_form: f64,
}

/// Blahut-Arimoto curve of a Bernoulli(p) source under Hamming distortion,
/// next to `h(p) - h(D)`.
pub fn bernoulli_curve(p: f64, points: usize) -> Result<String> {
    let src = ProbVec::bernoulli(p)?;
    let dist = DistortionMatrix::hamming(2);
    let top = p.min(1.0 - p);
    let opts = BaOptions::default();
    let n = points.clamp(2, 400);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let eps = top * i as f64 / (n - 1) as f64;
        let pt = rd_at_distortion(&src, &dist, Constraint::Upper { epsilon: eps }, &opts)?;
        out.push(CurvePoint {
            epsilon: eps,
            rate: pt.rate,
            closed_form: binary_entropy(p)? - binary_entropy(eps)?,
        });
    }
    Ok(serde_json::to_string(&out).expect("plain data"))
}

#[derive(Serialize)]
struct BoundPoint {
    n: f64,
    bound: f64,
    epsilon: f64,
}

/// Minimized Gaussian-mean bound for each sample count.
pub fn gaussian_bound_vs_n(d: f64, sigma0_sq: f64, lipschitz: f64, ns: &[f64]) -> Result<String> {
    let out = ns
        .iter()
        .map(|&n| {
            let rep = gaussian_mean_example(d, sigma0_sq, lipschitz, BoundInput::new(1.0, n, 1.0, 0.0), EpsStrategy::Minimize)?;
            Ok(BoundPoint {
                n,
                bound: rep.value,
                epsilon: rep.inputs.epsilon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::to_string(&out).expect("plain data"))
}

#[derive(Serialize)]
struct TrendPoint {
    m: usize,
    error_freq: f64,
    stderr: f64,
    log_error_prob: f64,
}

/// Covering error of random codebooks for a fair coin under Hamming distortion.
pub fn coin_covering_trend(rate: f64, epsilon: f64, ms: &[u32], trials: usize, seed: u64) -> Result<String> {
    let cfg = CoverConfig {
        source: CoverSource::Source {
            p: ProbVec::bernoulli(0.5)?,
            dist: DistortionMatrix::hamming(2),
        },
        rate,
        epsilon,
        m_values: ms.iter().map(|&m| m as usize).collect(),
        trials: trials.clamp(1, 100_000),
        seed,
        codebook: CodebookSource::Uniform,
        engine: Engine::Ensemble,
    };
    let res = simulate_covering(&cfg, &BaOptions::default())?;
    let exact = res.exact_log_error_prob.clone().unwrap_or_default();
    let out: Vec<TrendPoint> = res
        .m_values
        .iter()
        .enumerate()
        .map(|(i, &m)| TrendPoint {
            m,
            error_freq: res.error_freq[i],
            stderr: res.stderr[i],
            log_error_prob: exact.get(i).copied().unwrap_or(f64::NAN),
        })
        .collect();
    Ok(serde_json::to_string(&out).expect("plain data"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rdCurve)]
pub fn rd_curve(p: f64, points: usize) -> std::result::Result<String, JsError> {
    js(bernoulli_curve(p, points))
}

#[wasm_bindgen(js_name = boundVsN)]
pub fn bound_vs_n(d: f64, sigma0_sq: f64, lipschitz: f64, ns: Vec<f64>) -> std::result::Result<String, JsError> {
    js(gaussian_bound_vs_n(d, sigma0_sq, lipschitz, &ns))
}

#[wasm_bindgen(js_name = coveringTrend)]
pub fn covering_trend(rate: f64, epsilon: f64, ms: Vec<u32>, trials: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(coin_covering_trend(rate, epsilon, &ms, trials, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_tracks_closed_form() {
        let v: serde_json::Value = serde_json::from_str(&bernoulli_curve(0.3, 11).unwrap()).unwrap();
        for pt in v.as_array().unwrap() {
            let diff = pt["rate"].as_f64().unwrap() - pt["closed_form"].as_f64().unwrap();
            assert!(diff.abs() < 1e-8);
        }
    }

    #[test]
    fn bound_shrinks_with_n() {
        let v: serde_json::Value =
            serde_json::from_str(&gaussian_bound_vs_n(1.0, 1.0, 1.0, &[10.0, 100.0, 1000.0]).unwrap()).unwrap();
        let b: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["bound"].as_f64().unwrap()).collect();
        assert!(b[0] > b[1] && b[1] > b[2]);
    }

    #[test]
    fn trend_decreases_above_rate() {
        let v: serde_json::Value =
            serde_json::from_str(&coin_covering_trend(0.45, 0.2, &[10, 20, 40], 200, 1).unwrap()).unwrap();
        let l: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["log_error_prob"].as_f64().unwrap()).collect();
        assert!(l[0] > l[1] && l[1] > l[2]);
    }
}
