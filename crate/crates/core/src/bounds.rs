//! Generalization bound evaluators.
//!
//! Every evaluator returns a [`BoundReport`] carrying the value, the inputs
//! and every intermediate quantity that went into it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{input, RdError, Result};
use crate::harness::{coordinate_joint, enumerate_joint, FiniteProblem};
use crate::infocore::{binary_entropy, mutual_information, ProbVec};
use crate::rd_solver::{
    closed_form_rd, rd_at_distortion, BaOptions, Constraint, DistortionMatrix, Family, MartonResult,
};

const LN2: f64 = std::f64::consts::LN_2;

/// Subgaussian scale of a loss bounded in `[0, 1]`.
pub const BOUNDED_LOSS_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub sigma: f64,
    /// Sample count; real-valued so limit cases can be evaluated.
    pub n: f64,
    pub delta: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl BoundInput {
    pub fn new(sigma: f64, n: f64, delta: f64, epsilon: f64) -> Self {
        Self {
            sigma,
            n,
            delta,
            epsilon,
            rate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return input(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.n >= 1.0) || !self.n.is_finite() {
            return input(format!("n must be >= 1, got {}", self.n));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return input(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !self.epsilon.is_finite() {
            return input("epsilon must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

/// Which bound was evaluated and by which formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub bound: String,
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: String,
    pub value: f64,
    pub inputs: BoundInput,
    pub intermediates: BTreeMap<String, Quantity>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl BoundReport {
    fn new(kind: &str, value: f64, inputs: BoundInput, formula: &str) -> Self {
        Self {
            kind: kind.to_string(),
            value,
            inputs,
            intermediates: BTreeMap::new(),
            provenance: Provenance {
                bound: kind.to_string(),
                formula: formula.to_string(),
            },
            flags: Vec::new(),
        }
    }

    fn with(mut self, name: &str, value: f64, unit: &str) -> Self {
        self.intermediates.insert(
            name.to_string(),
            Quantity {
                value,
                unit: unit.to_string(),
            },
        );
        self
    }

    fn flag(mut self, f: &str) -> Self {
        self.flags.push(f.to_string());
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.intermediates.get(name).map(|q| q.value)
    }
}

/// How the distortion slack is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum EpsStrategy {
    Fixed { epsilon: f64 },
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsChoice {
    pub epsilon: f64,
    pub value: f64,
    pub grid_epsilon: f64,
    pub grid_value: f64,
}

pub const EPS_GRID_POINTS: usize = 200;

/// Minimize `f` over a log grid spanning `[scale/1e3, scale*10]`, then refine
/// by golden-section search between the grid neighbours of the best point.
/// Ties go to the smallest epsilon.
pub fn minimize_eps<F>(f: F, scale: f64, upper: Option<f64>) -> Result<EpsChoice>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    if !(scale > 0.0) || !scale.is_finite() {
        return input(format!("epsilon scale must be positive, got {scale}"));
    }
    let (lo, mut hi) = (scale / 1e3, scale * 10.0);
    if let Some(u) = upper {
        hi = hi.min(u);
    }
    if !(hi > lo) {
        return input("empty epsilon search range");
    }
    let (a, b) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..EPS_GRID_POINTS)
        .map(|i| (a + (b - a) * i as f64 / (EPS_GRID_POINTS - 1) as f64).exp())
        .collect();
    let vals = crate::par::try_map(&grid, |&e| f(e))?;
    let mut bi = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v < vals[bi] {
            bi = i;
        }
    }
    let (gl, gh) = (
        grid[bi.saturating_sub(1)].ln(),
        grid[(bi + 1).min(grid.len() - 1)].ln(),
    );
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x0, mut x1) = (gl, gh);
    let mut c = x1 - phi * (x1 - x0);
    let mut d = x0 + phi * (x1 - x0);
    let mut fc = f(c.exp())?;
    let mut fd = f(d.exp())?;
    for _ in 0..100 {
        if fc <= fd {
            x1 = d;
            d = c;
            fd = fc;
            c = x1 - phi * (x1 - x0);
            fc = f(c.exp())?;
        } else {
            x0 = c;
            c = d;
            fc = fd;
            d = x0 + phi * (x1 - x0);
            fd = f(d.exp())?;
        }
    }
    let (re, rv) = if fc <= fd { (c.exp(), fc) } else { (d.exp(), fd) };
    let (epsilon, value) = if rv < vals[bi] { (re, rv) } else { (grid[bi], vals[bi]) };
    Ok(EpsChoice {
        epsilon,
        value,
        grid_epsilon: grid[bi],
        grid_value: vals[bi],
    })
}

fn radical(sigma: f64, rate: f64, n: f64) -> f64 {
    (2.0 * sigma * sigma * rate.max(0.0) / n).sqrt()
}

/// `sqrt(2 sigma^2 R / n) + eps`; the absolute variant adds `log 2` to `R`.
pub fn expectation_bound(rate: f64, inp: BoundInput, abs: bool) -> Result<BoundReport> {
    inp.validate()?;
    if !(rate >= 0.0) || !rate.is_finite() {
        return input(format!("rate must be finite and >= 0, got {rate}"));
    }
    let r = if abs { rate + LN2 } else { rate };
    let value = radical(inp.sigma, r, inp.n) + inp.epsilon;
    let (kind, formula) = if abs {
        ("expectation_abs", "sqrt(2 sigma^2 (R + log 2) / n) + eps")
    } else {
        ("expectation", "sqrt(2 sigma^2 R / n) + eps")
    };
    Ok(BoundReport::new(kind, value, BoundInput { rate: Some(rate), ..inp }, formula)
        .with("rate", rate, "nats")
        .with("radical", value - inp.epsilon, "loss"))
}

/// Constraint family for the exact expectation bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectVariant {
    /// `|E[gen(S,W) - gen(S,What)]| <= eps`, bounds `|E gen|`.
    TwoSided,
    /// `E[gen(S,W) - gen(S,What)] <= eps`, bounds `E gen`.
    OneSided,
    /// `E[|gen(S,W)| - |gen(S,What)|] <= eps`, bounds `E |gen|`.
    Abs,
    /// Two-sided constraint on each coordinate `Z_i`, averaged outside the root.
    PerSample,
}

/// Source and distortion matrix of one rate-distortion subproblem.
#[derive(Debug, Clone)]
pub struct RdSubproblem {
    pub source: ProbVec,
    pub dist: DistortionMatrix,
}

fn conditional_rows(cells: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let marg: Vec<f64> = cells.iter().map(|r| r.iter().sum()).collect();
    let rows = cells
        .iter()
        .zip(&marg)
        .map(|(r, m)| {
            if *m > 0.0 {
                r.iter().map(|v| v / m).collect()
            } else {
                vec![1.0 / r.len() as f64; r.len()]
            }
        })
        .collect();
    (marg, rows)
}

/// `rho(x, what) = E[g(x, W) | x] - g(x, what)`.
fn centered(labels: Vec<String>, cols: Vec<String>, cond: &[Vec<f64>], g: &[Vec<f64>]) -> Result<DistortionMatrix> {
    let cells = cond
        .iter()
        .zip(g)
        .map(|(c, gr)| {
            let m: f64 = c.iter().zip(gr).map(|(a, b)| a * b).sum();
            gr.iter().map(|v| m - v).collect()
        })
        .collect();
    DistortionMatrix::new(labels, cols, cells)
}

/// The rate-distortion subproblems behind `exact_expectation_bound`.
pub fn expectation_subproblems(problem: &FiniteProblem, variant: ExpectVariant) -> Result<Vec<RdSubproblem>> {
    match variant {
        ExpectVariant::TwoSided | ExpectVariant::OneSided | ExpectVariant::Abs => {
            let j = enumerate_joint(problem)?;
            let (marg, cond) = conditional_rows(j.cells());
            let gen = problem.gen_table();
            let g: Vec<Vec<f64>> = if variant == ExpectVariant::Abs {
                gen.cells().iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect()
            } else {
                gen.cells().to_vec()
            };
            let source = ProbVec::normalized(problem.dataset_labels(), &marg)?;
            let dist = centered(problem.dataset_labels(), problem.w.clone(), &cond, &g)?;
            Ok(vec![RdSubproblem { source, dist }])
        }
        ExpectVariant::PerSample => (0..problem.n)
            .map(|i| {
                let cells = coordinate_joint(problem, i)?;
                let (marg, cond) = conditional_rows(&cells);
                let g: Vec<Vec<f64>> = (0..problem.z.len())
                    .map(|z| {
                        (0..problem.w.len())
                            .map(|w| problem.population_risk(w) - problem.loss[z][w])
                            .collect()
                    })
                    .collect();
                let source = ProbVec::normalized(problem.z.clone(), &marg)?;
                let dist = centered(problem.z.clone(), problem.w.clone(), &cond, &g)?;
                Ok(RdSubproblem { source, dist })
            })
            .collect(),
    }
}

fn sub_rate(sp: &RdSubproblem, eps: f64, two_sided: bool, opts: &BaOptions) -> Result<f64> {
    let c = if two_sided {
        Constraint::Interval { lo: -eps, hi: eps }
    } else {
        Constraint::Upper { epsilon: eps }
    };
    Ok(rd_at_distortion(&sp.source, &sp.dist, c, opts)?.rate)
}

fn exact_value(
    subs: &[RdSubproblem],
    variant: ExpectVariant,
    sigma: f64,
    n: f64,
    eps: f64,
    opts: &BaOptions,
) -> Result<(f64, Vec<f64>)> {
    match variant {
        ExpectVariant::TwoSided | ExpectVariant::OneSided => {
            let r = sub_rate(&subs[0], eps, variant == ExpectVariant::TwoSided, opts)?;
            Ok((radical(sigma, r, n) + eps, vec![r]))
        }
        ExpectVariant::Abs => {
            let r = sub_rate(&subs[0], eps, false, opts)?;
            Ok((radical(sigma, r + LN2, n) + eps, vec![r]))
        }
        ExpectVariant::PerSample => {
            let rates = subs
                .iter()
                .map(|sp| sub_rate(sp, eps, true, opts))
                .collect::<Result<Vec<_>>>()?;
            let avg = rates.iter().map(|r| radical(sigma, *r, 1.0)).sum::<f64>() / subs.len() as f64;
            Ok((avg + eps, rates))
        }
    }
}

/// Expectation bound with the exact constrained rate of an enumerable problem.
pub fn exact_expectation_bound(
    problem: &FiniteProblem,
    strategy: EpsStrategy,
    variant: ExpectVariant,
    opts: &BaOptions,
) -> Result<BoundReport> {
    let sigma = BOUNDED_LOSS_SIGMA;
    let n = problem.n as f64;
    let subs = expectation_subproblems(problem, variant)?;
    let (eps, value, rates, choice) = match strategy {
        EpsStrategy::Fixed { epsilon } => {
            let (v, r) = exact_value(&subs, variant, sigma, n, epsilon, opts)?;
            (epsilon, v, r, None)
        }
        EpsStrategy::Minimize => {
            let ch = minimize_eps(
                |e| Ok(exact_value(&subs, variant, sigma, n, e, opts)?.0),
                sigma / n.sqrt(),
                None,
            )?;
            let (v, r) = exact_value(&subs, variant, sigma, n, ch.epsilon, opts)?;
            (ch.epsilon, v, r, Some(ch))
        }
    };
    let (kind, formula) = match variant {
        ExpectVariant::TwoSided => ("exact_expectation_two_sided", "sqrt(2 sigma^2 R_E(eps) / n) + eps"),
        ExpectVariant::OneSided => ("exact_expectation_one_sided", "sqrt(2 sigma^2 R'_E(eps) / n) + eps"),
        ExpectVariant::Abs => ("exact_expectation_abs", "sqrt(2 sigma^2 (R''_E(eps) + log 2) / n) + eps"),
        ExpectVariant::PerSample => ("exact_expectation_per_sample", "(1/n) sum_i sqrt(2 sigma^2 R_E,i(eps)) + eps"),
    };
    let mut rep = BoundReport::new(kind, value, BoundInput::new(sigma, n, 1.0, eps), formula)
        .with("epsilon", eps, "loss");
    if rates.len() == 1 {
        rep = rep.with("rate", rates[0], "nats");
    } else {
        for (i, r) in rates.iter().enumerate() {
            rep = rep.with(&format!("rate_{i}"), *r, "nats");
        }
    }
    if let Some(ch) = choice {
        rep = rep
            .with("grid_epsilon", ch.grid_epsilon, "loss")
            .with("grid_value", ch.grid_value, "loss");
    }
    Ok(rep)
}

/// `sqrt(2 sigma^2 I(S;W) / n)`.
pub fn lossless_mi_bound(problem: &FiniteProblem) -> Result<BoundReport> {
    let j = enumerate_joint(problem)?;
    let mi = mutual_information(&j);
    let sigma = BOUNDED_LOSS_SIGMA;
    let n = problem.n as f64;
    let value = radical(sigma, mi, n);
    Ok(BoundReport::new("lossless_mi", value, BoundInput::new(sigma, n, 1.0, 0.0), "sqrt(2 sigma^2 I(S;W) / n)")
        .with("mutual_information", mi, "nats"))
}

/// Hypothesis distribution for the Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LipschitzSource {
    Finite { p: ProbVec, dist: DistortionMatrix },
    Family { family: Family },
}

fn lipschitz_rate(src: &LipschitzSource, level: f64, opts: &BaOptions) -> Result<f64> {
    match src {
        LipschitzSource::Finite { p, dist } => {
            Ok(rd_at_distortion(p, dist, Constraint::Upper { epsilon: level }, opts)?.rate)
        }
        LipschitzSource::Family { family } => closed_form_rd(*family, level),
    }
}

/// `sqrt(2 sigma^2 RD(eps / 2L) / n) + eps`.
pub fn lipschitz_expectation_bound(
    src: &LipschitzSource,
    lipschitz: f64,
    inp: BoundInput,
    strategy: EpsStrategy,
    opts: &BaOptions,
) -> Result<BoundReport> {
    inp.validate()?;
    if !(lipschitz > 0.0) {
        return input(format!("Lipschitz constant must be positive, got {lipschitz}"));
    }
    let eval = |e: f64| -> Result<f64> {
        let r = lipschitz_rate(src, e / (2.0 * lipschitz), opts)?;
        Ok(radical(inp.sigma, r, inp.n) + e)
    };
    let (eps, grid) = match strategy {
        EpsStrategy::Fixed { epsilon } => (epsilon, None),
        EpsStrategy::Minimize => {
            let ch = minimize_eps(eval, inp.sigma.max(1e-300) / inp.n.sqrt(), None)?;
            (ch.epsilon, Some(ch))
        }
    };
    if !(eps >= 0.0) {
        return input("epsilon must be >= 0");
    }
    let rate = lipschitz_rate(src, eps / (2.0 * lipschitz), opts)?;
    let value = radical(inp.sigma, rate, inp.n) + eps;
    let mut rep = BoundReport::new(
        "lipschitz_expectation",
        value,
        BoundInput { epsilon: eps, ..inp },
        "sqrt(2 sigma^2 RD(eps / (2 L)) / n) + eps",
    )
    .with("rate", rate, "nats")
    .with("distortion_level", eps / (2.0 * lipschitz), "hypothesis distortion")
    .with("lipschitz", lipschitz, "loss per distortion");
    if let Some(ch) = grid {
        rep = rep
            .with("grid_epsilon", ch.grid_epsilon, "loss")
            .with("grid_value", ch.grid_value, "loss");
    }
    Ok(rep)
}

/// The Gaussian-mean example: `W` is the mean of `n` samples of `N(0, sigma0^2 I_d)`
/// and the loss is `L`-Lipschitz in squared distance.
pub fn gaussian_mean_example(
    d: f64,
    sigma0_sq: f64,
    lipschitz: f64,
    inp: BoundInput,
    strategy: EpsStrategy,
) -> Result<BoundReport> {
    let src = LipschitzSource::Family {
        family: Family::GaussianSq {
            d,
            sigma2: sigma0_sq / inp.n,
        },
    };
    let mut rep = lipschitz_expectation_bound(&src, lipschitz, inp, strategy, &BaOptions::default())?;
    rep.kind = "gaussian_mean_example".into();
    rep.provenance.bound = rep.kind.clone();
    Ok(rep.with("optimal_epsilon_display", 2.0 * lipschitz * d * sigma0_sq / inp.n, "loss"))
}

/// `sqrt(4 sigma^2 dim log(n L^2) / n)`.
pub fn dimension_bound(dim: f64, lipschitz: f64, inp: BoundInput) -> Result<BoundReport> {
    inp.validate()?;
    if !(dim >= 0.0) {
        return input(format!("dimension must be >= 0, got {dim}"));
    }
    let nl2 = inp.n * lipschitz * lipschitz;
    if !(nl2 > 1.0) {
        return input(format!("n L^2 must exceed 1, got {nl2}"));
    }
    let value = (4.0 * inp.sigma * inp.sigma * dim * nl2.ln() / inp.n).sqrt();
    Ok(BoundReport::new("dimension", value, inp, "sqrt(4 sigma^2 dim_R log(n L^2) / n)")
        .with("dim_r", dim, "dimensionless")
        .with("log_n_l2", nl2.ln(), "dimensionless")
        .flag("uniform_convergence_assumed"))
}

/// `sqrt(2 sigma^2 (R_p + log(1/delta)) / n) + eps`.
pub fn tail_bound(rp: f64, inp: BoundInput, marton: Option<&MartonResult>) -> Result<BoundReport> {
    inp.validate()?;
    if !(rp >= 0.0) || !rp.is_finite() {
        return input(format!("R_p must be finite and >= 0, got {rp}"));
    }
    let log_inv = (1.0 / inp.delta).ln();
    let value = radical(inp.sigma, rp + log_inv, inp.n) + inp.epsilon;
    let mut rep = BoundReport::new(
        "tail",
        value,
        BoundInput { rate: Some(rp), ..inp },
        "sqrt(2 sigma^2 (R_p + log(1/delta)) / n) + eps",
    )
    .with("r_p", rp, "nats")
    .with("log_inv_delta", log_inv, "nats");
    if let Some(m) = marton {
        rep = rep
            .with("marton_kl_to_p", m.kl_to_p, "nats")
            .with("marton_radius", m.radius, "nats")
            .with("marton_points", m.evaluated as f64, "count");
        rep = rep.flag(if m.exact_grid {
            "r_p_from_exhaustive_grid"
        } else {
            "r_p_lower_bound_from_ascent"
        });
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcWhich {
    Expectation,
    AbsExpectation,
    Tail,
}

/// Bounds for a hypothesis class of VC dimension `d`.
pub fn vc_bounds(d: f64, n: f64, delta: f64, which: VcWhich) -> Result<BoundReport> {
    if !(d >= 1.0) || !(d <= n) {
        return input(format!("need 1 <= d <= n, got d = {d}, n = {n}"));
    }
    let inp = BoundInput::new(1.0, n, delta, 0.0);
    inp.validate()?;
    let growth = d * (2.0 * std::f64::consts::E * n / d).ln();
    let rep = match which {
        VcWhich::Expectation => BoundReport::new(
            "vc_expectation",
            (2.0 * growth / n).sqrt(),
            inp,
            "sqrt(2 d log(2 e n / d) / n)",
        ),
        VcWhich::AbsExpectation => BoundReport::new(
            "vc_abs_expectation",
            (2.0 * (growth + LN2) / n).sqrt(),
            inp,
            "sqrt(2 (d log(2 e n / d) + log 2) / n)",
        ),
        VcWhich::Tail => {
            let l = (2.0 / delta).ln();
            let a = (2.0 * (growth + l) / n).sqrt();
            let b = (l / n).sqrt();
            BoundReport::new(
                "vc_tail",
                a + b,
                inp,
                "sqrt(2 (d log(2 e n / d) + log(2/delta)) / n) + sqrt(log(2/delta) / n)",
            )
            .with("main_term", a, "loss")
            .with("deviation_term", b, "loss")
        }
    };
    Ok(rep.with("growth_term", growth, "nats"))
}

/// A supersample of `n` pairs together with the algorithm's kernel on every
/// selection `k` in `{1,2}^n` (bit `j` of the selection index set means `k_j = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupersampleContext {
    pub supersample: Vec<[usize; 2]>,
    pub loss: Vec<Vec<f64>>,
    pub u_probs: Vec<f64>,
    /// `kernels[u][k][w]`.
    pub kernels: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmiMode {
    FullK,
    PerCoordinate,
}

/// Largest `n` accepted for the full selection alphabet.
pub const FULL_K_MAX_N: usize = 12;

impl SupersampleContext {
    pub fn from_problem(problem: &FiniteProblem, supersample: Vec<[usize; 2]>) -> Result<Self> {
        let n = supersample.len();
        if n != problem.n {
            return input(format!("supersample has {n} pairs, problem has n = {}", problem.n));
        }
        if n > 20 {
            return Err(RdError::Size {
                what: "supersample pairs",
                size: n as f64,
                limit: 20.0,
            });
        }
        if supersample.iter().flatten().any(|&z| z >= problem.z.len()) {
            return input("supersample symbol outside the data alphabet");
        }
        let u_probs = problem.u_probs();
        let kernels = (0..u_probs.len())
            .map(|u| {
                (0..1usize << n)
                    .map(|b| problem.kernel_row_u(&selected(&supersample, b), u))
                    .collect()
            })
            .collect();
        Ok(Self {
            supersample,
            loss: problem.loss.clone(),
            u_probs,
            kernels,
        })
    }

    pub fn n(&self) -> usize {
        self.supersample.len()
    }

    fn validate(&self) -> Result<()> {
        if self.loss.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RdError::Invariant {
                invariant: "losses in [0,1]",
                detail: "supersample loss outside [0, 1]".into(),
            });
        }
        ProbVec::from_weights(self.u_probs.clone())?;
        let nk = 1usize << self.n();
        for ku in &self.kernels {
            if ku.len() != nk {
                return Err(RdError::Invariant {
                    invariant: "kernel rows normalized",
                    detail: format!("kernel needs {nk} rows"),
                });
            }
            for r in ku {
                if (r.iter().sum::<f64>() - 1.0).abs() > 1e-12 || r.iter().any(|v| *v < 0.0) {
                    return Err(RdError::Invariant {
                        invariant: "kernel rows normalized",
                        detail: "kernel row is not a distribution".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `f(z, k, w)`: held-out minus training loss of `w`.
    pub fn f(&self, b: usize, w: usize) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for (j, pair) in self.supersample.iter().enumerate() {
            let d = self.loss[pair[0]][w] - self.loss[pair[1]][w];
            // k_j = 1 (bit clear) trains on the first entry: sign (-1)^1
            acc += if (b >> j) & 1 == 0 { -d } else { d };
        }
        acc / n as f64
    }

    fn full_subproblem(&self, u: usize) -> Result<RdSubproblem> {
        let nk = 1usize << self.n();
        let k = self.kernels[u][0].len();
        let g: Vec<Vec<f64>> = (0..nk).map(|b| (0..k).map(|w| self.f(b, w)).collect()).collect();
        let labels = crate::infocore::index_labels(nk);
        let dist = centered(labels.clone(), crate::infocore::index_labels(k), &self.kernels[u], &g)?;
        Ok(RdSubproblem {
            source: ProbVec::new(labels, vec![1.0 / nk as f64; nk])?,
            dist,
        })
    }

    fn coordinate_subproblem(&self, u: usize, i: usize) -> Result<RdSubproblem> {
        let nk = 1usize << self.n();
        let k = self.kernels[u][0].len();
        let mut cond = vec![vec![0.0; k]; 2];
        for b in 0..nk {
            let bit = (b >> i) & 1;
            for (acc, v) in cond[bit].iter_mut().zip(&self.kernels[u][b]) {
                *acc += v * 2.0 / nk as f64;
            }
        }
        let pair = self.supersample[i];
        let g: Vec<Vec<f64>> = (0..2)
            .map(|bit| {
                (0..k)
                    .map(|w| {
                        let d = self.loss[pair[0]][w] - self.loss[pair[1]][w];
                        if bit == 0 {
                            -d
                        } else {
                            d
                        }
                    })
                    .collect()
            })
            .collect();
        let labels = vec!["1".to_string(), "2".to_string()];
        let dist = centered(labels.clone(), crate::infocore::index_labels(k), &cond, &g)?;
        Ok(RdSubproblem {
            source: ProbVec::new(labels, vec![0.5, 0.5])?,
            dist,
        })
    }

    /// Subproblems per auxiliary index: one for full K, n for per-coordinate.
    pub fn subproblems(&self, mode: CmiMode) -> Result<Vec<Vec<RdSubproblem>>> {
        self.validate()?;
        if mode == CmiMode::FullK && self.n() > FULL_K_MAX_N {
            return Err(RdError::Size {
                what: "n for the full selection alphabet",
                size: self.n() as f64,
                limit: FULL_K_MAX_N as f64,
            });
        }
        (0..self.u_probs.len())
            .map(|u| match mode {
                CmiMode::FullK => Ok(vec![self.full_subproblem(u)?]),
                CmiMode::PerCoordinate => (0..self.n()).map(|i| self.coordinate_subproblem(u, i)).collect(),
            })
            .collect()
    }
}

/// Dataset selected by `b` from the supersample.
pub fn selected(supersample: &[[usize; 2]], b: usize) -> Vec<usize> {
    supersample
        .iter()
        .enumerate()
        .map(|(j, pair)| pair[(b >> j) & 1])
        .collect()
}

fn cmi_value(subs: &[Vec<RdSubproblem>], u_probs: &[f64], n: f64, mode: CmiMode, eps: f64, opts: &BaOptions) -> Result<(f64, f64)> {
    let mut value = 0.0;
    let mut mean_rate = 0.0;
    for (pu, su) in u_probs.iter().zip(subs) {
        let rates = su
            .iter()
            .map(|sp| sub_rate(sp, eps, true, opts))
            .collect::<Result<Vec<_>>>()?;
        let v = match mode {
            CmiMode::FullK => (2.0 * rates[0] / n).sqrt(),
            CmiMode::PerCoordinate => rates.iter().map(|r| (2.0 * r).sqrt()).sum::<f64>() / n,
        };
        value += pu * v;
        mean_rate += pu * rates.iter().sum::<f64>() / rates.len() as f64;
    }
    Ok((value + eps, mean_rate))
}

/// Conditional bound for a fixed supersample: `E_U[sqrt(2 R / n)] + eps` (full K) or
/// `E_U[(1/n) sum_i sqrt(2 R_i)] + eps` (per coordinate).
pub fn cmi_bound(ctx: &SupersampleContext, strategy: EpsStrategy, mode: CmiMode, opts: &BaOptions) -> Result<BoundReport> {
    let subs = ctx.subproblems(mode)?;
    let n = ctx.n() as f64;
    let eps = match strategy {
        EpsStrategy::Fixed { epsilon } => epsilon,
        EpsStrategy::Minimize => {
            minimize_eps(|e| Ok(cmi_value(&subs, &ctx.u_probs, n, mode, e, opts)?.0), 1.0 / n.sqrt(), None)?.epsilon
        }
    };
    let (value, rate) = cmi_value(&subs, &ctx.u_probs, n, mode, eps, opts)?;
    Ok(cmi_report(mode, value, n, eps).with("mean_rate", rate, "nats"))
}

fn cmi_report(mode: CmiMode, value: f64, n: f64, eps: f64) -> BoundReport {
    let (kind, formula) = match mode {
        CmiMode::FullK => ("cmi_full", "E[sqrt(2 R_E(eps) / n)] + eps"),
        CmiMode::PerCoordinate => ("cmi_per_coordinate", "(1/n) sum_i E[sqrt(2 R_E,i(eps))] + eps"),
    };
    BoundReport::new(kind, value, BoundInput::new(1.0 / n.sqrt(), n, 1.0, eps), formula).with("epsilon", eps, "loss")
}

/// Conditional bound averaged over every supersample drawn from `mu`.
pub fn expected_cmi_bound(problem: &FiniteProblem, strategy: EpsStrategy, mode: CmiMode, opts: &BaOptions) -> Result<BoundReport> {
    let n = problem.n;
    let kz = problem.z.len();
    let count = (kz as f64).powi(2 * n as i32);
    if count > 1e5 {
        return Err(RdError::Size {
            what: "supersamples",
            size: count,
            limit: 1e5,
        });
    }
    let mut items = Vec::new();
    for idx in 0..count as usize {
        let mut x = idx;
        let mut zz = vec![[0usize; 2]; n];
        for pair in zz.iter_mut().rev() {
            pair[1] = x % kz;
            x /= kz;
            pair[0] = x % kz;
            x /= kz;
        }
        let p: f64 = zz.iter().map(|pr| problem.mu[pr[0]] * problem.mu[pr[1]]).product();
        if p <= 0.0 {
            continue;
        }
        let ctx = SupersampleContext::from_problem(problem, zz)?;
        items.push((p, ctx.subproblems(mode)?, ctx.u_probs));
    }
    let nf = n as f64;
    let eval = |e: f64| -> Result<(f64, f64)> {
        let mut v = 0.0;
        let mut r = 0.0;
        for (p, subs, up) in &items {
            let (a, b) = cmi_value(subs, up, nf, mode, e, opts)?;
            v += p * a;
            r += p * b;
        }
        Ok((v, r))
    };
    let eps = match strategy {
        EpsStrategy::Fixed { epsilon } => epsilon,
        EpsStrategy::Minimize => minimize_eps(|e| Ok(eval(e)?.0), 1.0 / nf.sqrt(), None)?.epsilon,
    };
    let (value, rate) = eval(eps)?;
    Ok(cmi_report(mode, value, nf, eps)
        .with("mean_rate", rate, "nats")
        .with("supersamples", items.len() as f64, "count"))
}

/// Parametric examples with Lipschitz losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticExample {
    /// `W` in a ball of radius `r0` in `R^d`, loss `L`-Lipschitz in the norm.
    EpsNet { d: f64, r0: f64, lipschitz: f64 },
    /// `W` uniform bits, loss `L`-Lipschitz in Hamming distance.
    Hamming { d: f64, lipschitz: f64 },
    /// `W` i.i.d. Laplace(`lambda`), loss `L`-Lipschitz in l1.
    Laplace { d: f64, lambda: f64, lipschitz: f64 },
    /// `W` i.i.d. `N(0, sigma_n^2)`, loss `L`-Lipschitz in squared l2.
    Gauss {
        d: f64,
        sigma_n: f64,
        lipschitz: f64,
        #[serde(default)]
        eps_per_coordinate: bool,
    },
}

/// Root of `x - 1 - ln x = c` on `x >= 1`, with its residual.
pub fn solve_x_minus_log(c: f64) -> Result<(f64, f64)> {
    let g = |x: f64| x - 1.0 - x.ln() - c;
    if c <= 0.0 {
        return Ok((1.0, g(1.0).abs().min(c.abs())));
    }
    let mut hi = 2.0;
    let mut tries = 0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 1100 || !hi.is_finite() {
            return Err(RdError::RootSolve { lo: 1.0, hi });
        }
    }
    let mut lo = 1.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    Ok((x, g(x).abs()))
}

struct ExampleEval {
    value: f64,
    rate_term: f64,
}

fn example_at(kind: &AnalyticExample, inp: &BoundInput, eps: f64, root: f64) -> Result<ExampleEval> {
    let s2 = inp.sigma * inp.sigma;
    let log_inv = (1.0 / inp.delta).ln();
    let (rate_term, value) = match *kind {
        AnalyticExample::EpsNet { d, r0, lipschitz } => {
            let rt = d * (2.0 * r0 / eps).max(1.0).ln();
            (rt, (2.0 * s2 * (rt + log_inv) / inp.n).sqrt() + 2.0 * lipschitz * eps)
        }
        AnalyticExample::Hamming { d, lipschitz } => {
            if eps > d {
                return input(format!("hamming example needs 0 <= eps <= d, got {eps}"));
            }
            let rt = (d * LN2 - d * binary_entropy(eps / d)?).max(0.0);
            (rt, (2.0 * s2 * (rt + log_inv) / inp.n).sqrt() + 2.0 * lipschitz * eps)
        }
        AnalyticExample::Laplace { d, lambda, lipschitz } => {
            let alpha = root / lambda;
            let rp = (alpha * d / eps).ln().max(0.0);
            let rt = d * rp;
            (rt, (2.0 * s2 * (rt + log_inv) / inp.n).sqrt() + 2.0 * lipschitz * eps)
        }
        AnalyticExample::Gauss {
            d,
            sigma_n,
            lipschitz,
            eps_per_coordinate,
        } => {
            let a2 = root * sigma_n * sigma_n;
            let ratio = if eps_per_coordinate { a2 / eps } else { d * a2 / eps };
            let rt = d * ratio.max(1.0).ln();
            (rt, (s2 * (rt + 2.0 * log_inv) / inp.n).sqrt() + 2.0 * lipschitz * eps)
        }
    };
    Ok(ExampleEval { value, rate_term })
}

/// Evaluate one of the parametric examples.
pub fn analytic_example_bound(kind: AnalyticExample, inp: BoundInput, strategy: EpsStrategy) -> Result<BoundReport> {
    inp.validate()?;
    let log_inv = (1.0 / inp.delta).ln();
    let mut flags = Vec::new();
    let (root, residual, label) = match kind {
        AnalyticExample::EpsNet { d, r0, lipschitz } => {
            if !(d > 0.0 && r0 > 0.0 && lipschitz >= 0.0) {
                return input("eps_net needs d > 0, r0 > 0, L >= 0");
            }
            (f64::NAN, 0.0, "eps_net")
        }
        AnalyticExample::Hamming { d, lipschitz } => {
            if !(d > 0.0 && lipschitz >= 0.0) {
                return input("hamming needs d > 0, L >= 0");
            }
            (f64::NAN, 0.0, "hamming")
        }
        AnalyticExample::Laplace { d, lambda, lipschitz } => {
            if !(d > 0.0 && lambda > 0.0 && lipschitz >= 0.0) {
                return input("laplace needs d > 0, lambda > 0, L >= 0");
            }
            if inp.delta >= 1.0 {
                flags.push("degenerate_delta_one_stationary_point".to_string());
            }
            let (x, r) = solve_x_minus_log(log_inv)?;
            (x, r, "laplace")
        }
        AnalyticExample::Gauss {
            d,
            sigma_n,
            lipschitz,
            eps_per_coordinate,
        } => {
            if !(d > 0.0 && sigma_n > 0.0 && lipschitz >= 0.0) {
                return input("gauss needs d > 0, sigma_n > 0, L >= 0");
            }
            if inp.delta >= 1.0 {
                flags.push("degenerate_delta_one_stationary_point".to_string());
            }
            if eps_per_coordinate {
                flags.push("eps_normalized_per_coordinate".to_string());
            }
            let (y, _) = solve_x_minus_log(2.0 * log_inv)?;
            // residual of the defining equation in alpha
            let r = (0.5 * (y - 1.0 - y.ln()) - log_inv).abs();
            (y, r, "gauss")
        }
    };
    let upper = match kind {
        AnalyticExample::Hamming { d, .. } => Some(d),
        _ => None,
    };
    let eps = match strategy {
        EpsStrategy::Fixed { epsilon } => epsilon,
        EpsStrategy::Minimize => {
            minimize_eps(
                |e| Ok(example_at(&kind, &inp, e, root)?.value),
                inp.sigma.max(1e-300) / inp.n.sqrt(),
                upper,
            )?
            .epsilon
        }
    };
    if !(eps > 0.0) && !matches!(kind, AnalyticExample::Hamming { .. }) {
        return input("epsilon must be positive for this example");
    }
    if eps < 0.0 {
        return input("epsilon must be >= 0");
    }
    let ev = example_at(&kind, &inp, eps, root)?;
    let formula = match kind {
        AnalyticExample::EpsNet { .. } => "sqrt(2 sigma^2 (d log(2 r0 / eps) + log(1/delta)) / n) + 2 L eps",
        AnalyticExample::Hamming { .. } => "sqrt(2 sigma^2 (d log 2 - d h_b(eps/d) + log(1/delta)) / n) + 2 L eps",
        AnalyticExample::Laplace { .. } => "sqrt(2 sigma^2 (d R' + log(1/delta)) / n) + 2 L eps, log(1/delta) = a lambda - 1 - log(a lambda), a = eps e^R' / d",
        AnalyticExample::Gauss { .. } => "sqrt(sigma^2 (d log(max(d a^2 / eps, 1)) + 2 log(1/delta)) / n) + 2 L eps, log(1/delta) = (a^2/s_N^2 - 1 - log(a^2/s_N^2)) / 2",
    };
    let mut rep = BoundReport::new(
        &format!("example_{label}"),
        ev.value,
        BoundInput { epsilon: eps, ..inp },
        formula,
    )
    .with("rate_term", ev.rate_term, "nats")
    .with("epsilon", eps, "loss");
    match kind {
        AnalyticExample::EpsNet { d, r0, lipschitz } => {
            let target = (-d / 2.0).exp();
            if inp.n >= 16.0 && ((inp.delta - target) / target).abs() < 1e-9 {
                let cf = (4.0 * r0 * lipschitz + inp.sigma * d.sqrt()) * (inp.n.ln() / inp.n).sqrt();
                rep = rep.with("closed_form", cf, "loss");
            }
        }
        AnalyticExample::Hamming { d, .. } => {
            if eps >= d {
                rep = rep.flag("degenerate_corner_eps_equals_d");
            }
        }
        AnalyticExample::Laplace { d, lambda, .. } => {
            let alpha = root / lambda;
            rep = rep
                .with("alpha", alpha, "hypothesis units")
                .with("r_prime", (alpha * d / eps).ln(), "nats")
                .with("root_residual", residual, "nats");
        }
        AnalyticExample::Gauss { sigma_n, .. } => {
            rep = rep
                .with("alpha", sigma_n * root.sqrt(), "hypothesis units")
                .with("root_residual", residual, "nats");
        }
    }
    for f in flags {
        rep = rep.flag(&f);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{shipped_problems, Algorithm};

    fn inp(sigma: f64, n: f64, delta: f64, eps: f64) -> BoundInput {
        BoundInput::new(sigma, n, delta, eps)
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation_bound(0.0, inp(1.0, 100.0, 1.0, 0.01), false).unwrap().value, 0.01);
        let v = expectation_bound(0.5, inp(1.0, 100.0, 1.0, 0.01), false).unwrap().value;
        assert!((v - 0.11).abs() < 1e-15);
        let v = expectation_bound(0.0, inp(1.0, 100.0, 1.0, 0.0), true).unwrap().value;
        assert!((v - 0.117741002251547).abs() < 1e-12);
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(dimension_bound(0.0, 1.0, inp(1.0, 100.0, 1.0, 0.0)).unwrap().value, 0.0);
        let v = dimension_bound(1.0, 1.0, inp(1.0, std::f64::consts::E, 1.0, 0.0)).unwrap().value;
        assert!((v - 2.0 / std::f64::consts::E.sqrt()).abs() < 1e-15);
        let v = dimension_bound(0.5, 1.0, inp(1.0, 1e4, 1.0, 0.0)).unwrap().value;
        assert!((v - 0.0429193205).abs() < 1e-9, "{v}");
        assert!(dimension_bound(1.0, 1.0, inp(1.0, 1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn tail_examples() {
        let h = tail_bound(0.0, inp(1.0, 400.0, 0.05, 0.0), None).unwrap().value;
        assert!((h - (2.0 * (20f64).ln() / 400.0).sqrt()).abs() < 1e-15);
        // sqrt(2 (1 + log 20) / 400), 30-digit evaluation
        let v = tail_bound(1.0, inp(1.0, 400.0, 0.05, 0.0), None).unwrap().value;
        assert!((v - 0.1413458926455592).abs() < 1e-12, "{v}");
        let v = tail_bound(0.7, inp(1.0, 10.0, 1.0, 0.1), None).unwrap().value;
        assert!((v - ((1.4f64 / 10.0).sqrt() + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn vc_examples() {
        let v = vc_bounds(10.0, 1000.0, 0.05, VcWhich::Expectation).unwrap().value;
        assert!((v - 0.354917381).abs() < 1e-8, "{v}");
        let t = vc_bounds(10.0, 1000.0, 0.05, VcWhich::Tail).unwrap().value;
        assert!((t - 0.425899269).abs() < 1e-8, "{t}");
        let edge = vc_bounds(5.0, 5.0, 0.1, VcWhich::Expectation).unwrap().value;
        assert!(edge.is_finite() && edge > 1.0);
        assert!(vc_bounds(11.0, 10.0, 0.1, VcWhich::Expectation).is_err());
    }

    #[test]
    fn gaussian_mean_display() {
        let at = gaussian_mean_example(1.0, 1.0, 1.0, inp(1.0, 100.0, 1.0, 0.0), EpsStrategy::Fixed { epsilon: 0.02 })
            .unwrap();
        assert!((at.value - 0.02).abs() < 1e-15);
        let min = gaussian_mean_example(1.0, 1.0, 1.0, inp(1.0, 100.0, 1.0, 0.0), EpsStrategy::Minimize).unwrap();
        assert!(min.value <= 0.0201, "{}", min.value);
    }

    #[test]
    fn roots() {
        for c in [1e-6, 0.1, 1.0, 2.995732, 30.0] {
            let (x, r) = solve_x_minus_log(c).unwrap();
            assert!(x >= 1.0);
            assert!(r < 1e-10, "c = {c}: residual {r}");
        }
        assert_eq!(solve_x_minus_log(0.0).unwrap().0, 1.0);
        let g = analytic_example_bound(
            AnalyticExample::Gauss {
                d: 2.0,
                sigma_n: 0.7,
                lipschitz: 1.0,
                eps_per_coordinate: false,
            },
            inp(1.0, 100.0, 1.0, 0.1),
            EpsStrategy::Fixed { epsilon: 0.1 },
        )
        .unwrap();
        assert!((g.get("alpha").unwrap() - 0.7).abs() < 1e-10);
    }

    #[test]
    fn eps_net_closed_form() {
        let r = analytic_example_bound(
            AnalyticExample::EpsNet {
                d: 4.0,
                r0: 1.0,
                lipschitz: 1.0,
            },
            inp(1.0, 100.0, (-2f64).exp(), 0.1),
            EpsStrategy::Fixed { epsilon: 0.1 },
        )
        .unwrap();
        assert!((r.get("closed_form").unwrap() - 1.287579616).abs() < 1e-8);
    }

    #[test]
    fn hamming_corner_flagged() {
        let r = analytic_example_bound(
            AnalyticExample::Hamming { d: 3.0, lipschitz: 1.0 },
            inp(1.0, 100.0, 0.1, 3.0),
            EpsStrategy::Fixed { epsilon: 3.0 },
        )
        .unwrap();
        assert!(r.flags.iter().any(|f| f.contains("degenerate")));
        assert!((r.get("rate_term").unwrap() - 3.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn independent_algorithm_bounds_vanish() {
        let rows = vec![vec![0.5, 0.5]; 4];
        let p = FiniteProblem::new(
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec!["x".into(), "y".into()],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            2,
            Algorithm::Table { rows },
        )
        .unwrap();
        let opts = BaOptions::default();
        let r = exact_expectation_bound(&p, EpsStrategy::Fixed { epsilon: 0.0 }, ExpectVariant::TwoSided, &opts).unwrap();
        assert!(r.value.abs() < 1e-6, "{}", r.value);
        assert!(lossless_mi_bound(&p).unwrap().value < 1e-6);
    }

    #[test]
    fn exact_below_lossless() {
        let opts = BaOptions::default();
        for p in shipped_problems() {
            let e = exact_expectation_bound(&p, EpsStrategy::Fixed { epsilon: 0.0 }, ExpectVariant::TwoSided, &opts).unwrap();
            let l = lossless_mi_bound(&p).unwrap();
            assert!(e.value <= l.value + 1e-7, "{:?}: {} > {}", p.name, e.value, l.value);
        }
    }

    #[test]
    fn cmi_identical_columns_is_eps() {
        let p = &shipped_problems()[8];
        let ctx = SupersampleContext::from_problem(p, vec![[0, 0], [1, 1]]).unwrap();
        let r = cmi_bound(&ctx, EpsStrategy::Fixed { epsilon: 0.05 }, CmiMode::FullK, &BaOptions::default()).unwrap();
        assert!((r.value - 0.05).abs() < 1e-12);
    }
}
