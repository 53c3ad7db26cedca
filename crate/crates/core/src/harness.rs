//! Enumerable learning problems and their exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, RdError, Result};
use crate::infocore::{mutual_information, JointTable, ProbVec, MASS_TOL};
use crate::rd_solver::DistortionMatrix;

/// Exact enumeration refuses more datasets than this.
pub const EXACT_LIMIT: usize = 1_000_000;

/// Learning algorithm, i.e. a kernel from datasets to hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// Empirical risk minimizer; ties go to the lowest hypothesis index.
    Erm,
    /// Softmax of `-beta * empirical risk`.
    Gibbs { beta: f64 },
    /// Explicit kernel, one row per dataset in lexicographic order.
    Table { rows: Vec<Vec<f64>> },
    /// Finite auxiliary randomness `U`: component `u` is used with probability `u_probs[u]`.
    Mixture {
        u_probs: Vec<f64>,
        components: Vec<Algorithm>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct FiniteProblem {
    pub z: Vec<String>,
    pub mu: Vec<f64>,
    pub w: Vec<String>,
    pub loss: Vec<Vec<f64>>,
    pub n: usize,
    pub algorithm: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
}

#[derive(Deserialize)]
struct RawProblem {
    z: Vec<String>,
    mu: Vec<f64>,
    w: Vec<String>,
    loss: Vec<Vec<f64>>,
    n: usize,
    algorithm: Algorithm,
    #[serde(default)]
    name: Option<String>,
}

impl TryFrom<RawProblem> for FiniteProblem {
    type Error = RdError;
    fn try_from(r: RawProblem) -> Result<Self> {
        let mut p = FiniteProblem::new(r.z, r.mu, r.w, r.loss, r.n, r.algorithm)?;
        p.name = r.name;
        Ok(p)
    }
}

/// Exact summary of `gen(S, W)` under the enumerated joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub exact_mean_gen: f64,
    pub exact_mean_abs_gen: f64,
    pub mi_sw: f64,
    /// Distinct values of gen with their probabilities, ascending.
    pub gen_distribution: Vec<(f64, f64)>,
    pub subgaussian_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloGen {
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub mean_abs: f64,
    pub quantiles: Vec<Quantile>,
    pub min: f64,
    pub max: f64,
}

fn validate_kernel(alg: &Algorithm, datasets: usize, k: usize) -> Result<()> {
    match alg {
        Algorithm::Erm => Ok(()),
        Algorithm::Gibbs { beta } => {
            if beta.is_finite() && *beta >= 0.0 {
                Ok(())
            } else {
                input(format!("gibbs beta must be finite and >= 0, got {beta}"))
            }
        }
        Algorithm::Table { rows } => {
            if rows.len() != datasets || rows.iter().any(|r| r.len() != k) {
                return Err(RdError::Invariant {
                    invariant: "kernel rows normalized",
                    detail: format!("table kernel must be {datasets}x{k}"),
                });
            }
            for (i, r) in rows.iter().enumerate() {
                let s: f64 = r.iter().sum();
                if r.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > MASS_TOL {
                    return Err(RdError::Invariant {
                        invariant: "kernel rows normalized",
                        detail: format!("kernel row {i} sums to {s}"),
                    });
                }
            }
            Ok(())
        }
        Algorithm::Mixture { u_probs, components } => {
            if u_probs.len() != components.len() || components.is_empty() {
                return input("mixture needs one probability per component");
            }
            ProbVec::from_weights(u_probs.clone())?;
            for c in components {
                if matches!(c, Algorithm::Mixture { .. }) {
                    return input("nested mixtures are not supported");
                }
                validate_kernel(c, datasets, k)?;
            }
            Ok(())
        }
    }
}

impl FiniteProblem {
    pub fn new(
        z: Vec<String>,
        mu: Vec<f64>,
        w: Vec<String>,
        loss: Vec<Vec<f64>>,
        n: usize,
        algorithm: Algorithm,
    ) -> Result<Self> {
        ProbVec::new(z.clone(), mu.clone())?;
        ProbVec::uniform(w.len())?;
        if n == 0 {
            return input("sample count n must be >= 1");
        }
        if loss.len() != z.len() || loss.iter().any(|r| r.len() != w.len()) {
            return Err(RdError::Invariant {
                invariant: "dimensions match alphabets",
                detail: format!("loss table must be {}x{}", z.len(), w.len()),
            });
        }
        if loss.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RdError::Invariant {
                invariant: "loss entries in [0,1]",
                detail: "unbounded or negative losses are rejected".into(),
            });
        }
        let datasets = (z.len() as f64).powi(n as i32);
        if datasets > EXACT_LIMIT as f64 {
            return Err(RdError::Size {
                what: "|Z|^n",
                size: datasets,
                limit: EXACT_LIMIT as f64,
            });
        }
        validate_kernel(&algorithm, datasets as usize, w.len())?;
        Ok(Self {
            z,
            mu,
            w,
            loss,
            n,
            algorithm,
            name: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn num_datasets(&self) -> usize {
        self.z.len().pow(self.n as u32)
    }

    /// Symbols of dataset number `idx` (lexicographic, first coordinate most significant).
    pub fn dataset(&self, idx: usize) -> Vec<usize> {
        let k = self.z.len();
        let mut out = vec![0; self.n];
        let mut x = idx;
        for slot in out.iter_mut().rev() {
            *slot = x % k;
            x /= k;
        }
        out
    }

    pub fn dataset_index(&self, s: &[usize]) -> usize {
        s.iter().fold(0, |acc, &z| acc * self.z.len() + z)
    }

    pub fn dataset_label(&self, idx: usize) -> String {
        self.dataset(idx)
            .iter()
            .map(|&z| self.z[z].as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn dataset_prob(&self, s: &[usize]) -> f64 {
        s.iter().map(|&z| self.mu[z]).product()
    }

    pub fn population_risk(&self, w: usize) -> f64 {
        self.mu.iter().zip(&self.loss).map(|(m, r)| m * r[w]).sum()
    }

    pub fn empirical_risk(&self, s: &[usize], w: usize) -> f64 {
        s.iter().map(|&z| self.loss[z][w]).sum::<f64>() / s.len() as f64
    }

    pub fn gen(&self, s: &[usize], w: usize) -> f64 {
        self.population_risk(w) - self.empirical_risk(s, w)
    }

    /// Probabilities of the auxiliary index (a single atom without a mixture).
    pub fn u_probs(&self) -> Vec<f64> {
        match &self.algorithm {
            Algorithm::Mixture { u_probs, .. } => u_probs.clone(),
            _ => vec![1.0],
        }
    }

    fn component_row(&self, alg: &Algorithm, s: &[usize]) -> Vec<f64> {
        let k = self.w.len();
        match alg {
            Algorithm::Erm => {
                let mut best = 0;
                let mut br = self.empirical_risk(s, 0);
                for w in 1..k {
                    let r = self.empirical_risk(s, w);
                    if r < br {
                        best = w;
                        br = r;
                    }
                }
                let mut row = vec![0.0; k];
                row[best] = 1.0;
                row
            }
            Algorithm::Gibbs { beta } => {
                let risks: Vec<f64> = (0..k).map(|w| self.empirical_risk(s, w)).collect();
                let m = risks.iter().copied().fold(f64::INFINITY, f64::min);
                let e: Vec<f64> = risks.iter().map(|r| (-beta * (r - m)).exp()).collect();
                let t: f64 = e.iter().sum();
                e.into_iter().map(|v| v / t).collect()
            }
            Algorithm::Table { rows } => rows[self.dataset_index(s)].clone(),
            Algorithm::Mixture { .. } => unreachable!("validated: no nested mixtures"),
        }
    }

    /// `P(W | S = s, U = u)`.
    pub fn kernel_row_u(&self, s: &[usize], u: usize) -> Vec<f64> {
        match &self.algorithm {
            Algorithm::Mixture { components, .. } => self.component_row(&components[u], s),
            alg => self.component_row(alg, s),
        }
    }

    /// `P(W | S = s)`, marginalized over `U`.
    pub fn kernel_row(&self, s: &[usize]) -> Vec<f64> {
        let up = self.u_probs();
        let mut row = vec![0.0; self.w.len()];
        for (u, pu) in up.iter().enumerate() {
            for (acc, v) in row.iter_mut().zip(self.kernel_row_u(s, u)) {
                *acc += pu * v;
            }
        }
        row
    }

    pub fn dataset_labels(&self) -> Vec<String> {
        (0..self.num_datasets()).map(|i| self.dataset_label(i)).collect()
    }

    /// `gen(s, w)` for every dataset and hypothesis.
    pub fn gen_table(&self) -> DistortionMatrix {
        let cells = (0..self.num_datasets())
            .map(|i| {
                let s = self.dataset(i);
                (0..self.w.len()).map(|w| self.gen(&s, w)).collect()
            })
            .collect();
        DistortionMatrix::new(self.dataset_labels(), self.w.clone(), cells)
            .expect("gen values of a bounded loss are finite")
    }

    pub fn mu_vec(&self) -> ProbVec {
        ProbVec::new(self.z.clone(), self.mu.clone()).expect("validated on construction")
    }
}

/// Exact `P_{S,W}` by enumerating every dataset.
pub fn enumerate_joint(problem: &FiniteProblem) -> Result<JointTable> {
    let nd = problem.num_datasets();
    if nd > EXACT_LIMIT {
        return Err(RdError::Size {
            what: "|Z|^n",
            size: nd as f64,
            limit: EXACT_LIMIT as f64,
        });
    }
    let cells: Vec<Vec<f64>> = (0..nd)
        .map(|i| {
            let s = problem.dataset(i);
            let ps = problem.dataset_prob(&s);
            problem.kernel_row(&s).into_iter().map(|v| ps * v).collect()
        })
        .collect();
    // renormalize the rounding of the product measure before validation
    let total: f64 = cells.iter().flatten().sum();
    let cells = cells
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / total).collect())
        .collect();
    JointTable::new(problem.dataset_labels(), problem.w.clone(), cells)
}

/// Exact gen statistics under the enumerated joint.
pub fn exact_gen_stats(problem: &FiniteProblem) -> Result<GenStats> {
    let j = enumerate_joint(problem)?;
    let gen = problem.gen_table();
    let mut mean = 0.0;
    let mut mean_abs = 0.0;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (s, row) in j.cells().iter().enumerate() {
        for (w, p) in row.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            let g = gen.get(s, w);
            mean += p * g;
            mean_abs += p * g.abs();
            atoms.push((g, *p));
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut dist: Vec<(f64, f64)> = Vec::new();
    for (g, p) in atoms {
        match dist.last_mut() {
            Some(last) if (last.0 - g).abs() <= 1e-14 => last.1 += p,
            _ => dist.push((g, p)),
        }
    }
    Ok(GenStats {
        exact_mean_gen: mean,
        exact_mean_abs_gen: mean_abs,
        mi_sw: mutual_information(&j),
        gen_distribution: dist,
        subgaussian_sigma: 0.5,
    })
}

/// Empirical quantile: smallest sample `x` with at least a fraction `level` of samples `<= x`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let idx = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn sample_index(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1)
}

fn cdf_of(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Sampled gen distribution. Trial `t` draws from its own stream of the seeded generator.
pub fn monte_carlo_gen(problem: &FiniteProblem, trials: usize, seed: u64, levels: &[f64]) -> Result<MonteCarloGen> {
    if trials == 0 {
        return input("monte carlo needs at least one trial");
    }
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return input("quantile levels must lie in [0, 1]");
    }
    let mu_cdf = cdf_of(&problem.mu);
    let gen = problem.gen_table();
    let nd = problem.num_datasets();
    let kernel_cdfs: Vec<Vec<f64>> = (0..nd).map(|i| cdf_of(&problem.kernel_row(&problem.dataset(i)))).collect();
    let draw = |t: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut idx = 0usize;
        for _ in 0..problem.n {
            idx = idx * problem.z.len() + sample_index(&mu_cdf, rng.gen::<f64>());
        }
        let w = sample_index(&kernel_cdfs[idx], rng.gen::<f64>());
        gen.get(idx, w)
    };
    let mut samples = crate::par::map_range(trials, draw);
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mean_abs = samples.iter().map(|g| g.abs()).sum::<f64>() / n;
    let var = if trials > 1 {
        samples.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    samples.sort_by(f64::total_cmp);
    let quantiles = levels
        .iter()
        .map(|&level| Quantile {
            level,
            value: empirical_quantile(&samples, level),
        })
        .collect();
    Ok(MonteCarloGen {
        trials,
        seed,
        mean,
        stderr: (var / n).sqrt(),
        mean_abs,
        quantiles,
        min: samples[0],
        max: samples[trials - 1],
    })
}

/// Per-sample joint of `(Z_i, W)`.
pub fn coordinate_joint(problem: &FiniteProblem, i: usize) -> Result<Vec<Vec<f64>>> {
    if i >= problem.n {
        return input(format!("coordinate {i} out of range for n = {}", problem.n));
    }
    let mut cells = vec![vec![0.0; problem.w.len()]; problem.z.len()];
    for idx in 0..problem.num_datasets() {
        let s = problem.dataset(idx);
        let ps = problem.dataset_prob(&s);
        for (w, v) in problem.kernel_row(&s).into_iter().enumerate() {
            cells[s[i]][w] += ps * v;
        }
    }
    Ok(cells)
}

/// `(1/n) sum_i E[gen({Z_i}, W)]`, which equals `E[gen(S, W)]`.
pub fn per_sample_mean_gen(problem: &FiniteProblem) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..problem.n {
        let c = coordinate_joint(problem, i)?;
        for (z, row) in c.iter().enumerate() {
            for (w, p) in row.iter().enumerate() {
                acc += p * (problem.population_risk(w) - problem.loss[z][w]);
            }
        }
    }
    Ok(acc / problem.n as f64)
}

/// Marginal of `S` in the enumerated joint, as a product check.
pub fn max_marginal_error(problem: &FiniteProblem, joint: &JointTable) -> f64 {
    let m = joint.row_marginal();
    (0..problem.num_datasets())
        .map(|i| (m.weights()[i] - problem.dataset_prob(&problem.dataset(i))).abs())
        .fold(0.0, f64::max)
}

/// The sixteen enumerable variants used by the dominance suite.
pub fn shipped_problems() -> Vec<FiniteProblem> {
    let losses = [
        ("sym", vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        ("asym", vec![vec![0.2, 0.9], vec![0.7, 0.1]]),
    ];
    let mus = [("uniform", vec![0.5, 0.5]), ("skew", vec![0.3, 0.7])];
    let algs = [("erm", Algorithm::Erm), ("gibbs4", Algorithm::Gibbs { beta: 4.0 })];
    let mut out = Vec::with_capacity(16);
    for n in [1usize, 2] {
        for (mn, mu) in &mus {
            for (ln, loss) in &losses {
                for (an, alg) in &algs {
                    let p = FiniteProblem::new(
                        vec!["0".into(), "1".into()],
                        mu.clone(),
                        vec!["w0".into(), "w1".into()],
                        loss.clone(),
                        n,
                        alg.clone(),
                    )
                    .expect("shipped problems are valid")
                    .with_name(format!("n{n}-{mn}-{ln}-{an}"));
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Entries of `shipped_problems` whose joint is 2x2 (`n = 1`).
pub fn shipped_two_by_two() -> Vec<FiniteProblem> {
    shipped_problems().into_iter().filter(|p| p.n == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(loss: Vec<Vec<f64>>, n: usize, alg: Algorithm) -> FiniteProblem {
        FiniteProblem::new(
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            (0..loss[0].len()).map(|i| format!("w{i}")).collect(),
            loss,
            n,
            alg,
        )
        .unwrap()
    }

    #[test]
    fn constant_loss_has_zero_gen() {
        let p = two_point(vec![vec![0.4, 0.6], vec![0.4, 0.6]], 2, Algorithm::Erm);
        let st = exact_gen_stats(&p).unwrap();
        assert!(st.exact_mean_gen.abs() < 1e-15);
        assert_eq!(st.gen_distribution.len(), 1);
    }

    #[test]
    fn single_hypothesis_gen_values() {
        let p = two_point(vec![vec![0.0], vec![1.0]], 1, Algorithm::Erm);
        let st = exact_gen_stats(&p).unwrap();
        assert_eq!(st.gen_distribution, vec![(-0.5, 0.5), (0.5, 0.5)]);
        assert_eq!(st.exact_mean_gen, 0.0);
        assert_eq!(st.subgaussian_sigma, 0.5);
    }

    #[test]
    fn erm_hand_enumeration() {
        // datasets aa, ab, ba, bb; ERM picks w0 unless it is strictly worse
        let p = two_point(vec![vec![0.0, 1.0], vec![1.0, 0.0]], 2, Algorithm::Erm);
        let j = enumerate_joint(&p).unwrap();
        assert_eq!(j.cells(), &[vec![0.25, 0.0], vec![0.25, 0.0], vec![0.25, 0.0], vec![0.0, 0.25]]);
        let st = exact_gen_stats(&p).unwrap();
        // gen(aa,w0) = 0.5, gen(ab,w0) = gen(ba,w0) = 0, gen(bb,w1) = 0.5
        assert!((st.exact_mean_gen - 0.25).abs() < 1e-15);
    }

    #[test]
    fn independent_algorithm_has_zero_mi() {
        let rows = vec![vec![0.3, 0.7]; 4];
        let p = two_point(vec![vec![0.0, 1.0], vec![1.0, 0.0]], 2, Algorithm::Table { rows });
        let st = exact_gen_stats(&p).unwrap();
        assert!(st.mi_sw.abs() < 1e-12);
        assert!(st.exact_mean_gen.abs() < 1e-12);
    }

    #[test]
    fn marginals_and_per_sample_identity() {
        for p in shipped_problems() {
            let j = enumerate_joint(&p).unwrap();
            assert!(max_marginal_error(&p, &j) < 1e-12);
            let st = exact_gen_stats(&p).unwrap();
            assert!((per_sample_mean_gen(&p).unwrap() - st.exact_mean_gen).abs() < 1e-12);
            assert!(st.exact_mean_gen.abs() <= st.exact_mean_abs_gen + 1e-15);
        }
    }

    #[test]
    fn quantile_definition() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&s, 1.0), 4.0);
        assert_eq!(empirical_quantile(&s, 0.5), 2.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
        assert_eq!(empirical_quantile(&s, 0.9), 4.0);
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let p = &shipped_problems()[9];
        let a = monte_carlo_gen(p, 500, 7, &[0.9, 1.0]).unwrap();
        let b = monte_carlo_gen(p, 500, 7, &[0.9, 1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.quantiles[1].value, a.max);
    }

    #[test]
    fn deterministic_problem_is_a_point_mass() {
        let p = two_point(vec![vec![0.3, 0.5], vec![0.3, 0.5]], 1, Algorithm::Erm);
        let mc = monte_carlo_gen(&p, 100, 1, &[0.5]).unwrap();
        assert_eq!(mc.min, mc.max);
        assert_eq!(mc.stderr, 0.0);
    }

    #[test]
    fn rejects_bad_problems() {
        let bad_loss = FiniteProblem::new(
            vec!["a".into()],
            vec![1.0],
            vec!["w".into()],
            vec![vec![1.5]],
            1,
            Algorithm::Erm,
        );
        assert!(matches!(bad_loss, Err(RdError::Invariant { .. })));
        let json = r#"{"z":["a","b"],"mu":[0.5,0.5],"w":["w"],"loss":[[0.1],[0.2]],"n":1,
                       "algorithm":{"kind":"table","rows":[[1.0],[0.5]]}}"#;
        let err = serde_json::from_str::<FiniteProblem>(json).unwrap_err().to_string();
        assert!(err.contains("kernel rows normalized"), "{err}");
    }
}
