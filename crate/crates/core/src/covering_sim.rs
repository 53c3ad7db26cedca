//! Block-covering simulation and the identity checkers around it.
//!
//! Random codebooks stand in for the hypothesis books of the compressibility
//! definitions. They certify ensemble averages only, not a fixed book.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, RdError, Result};
use crate::harness::{enumerate_joint, FiniteProblem};
use crate::infocore::{kl_of, ProbVec, RealDist, ZERO_WEIGHT};
use crate::rd_solver::{rd_at_distortion, BaOptions, Constraint, DistortionMatrix};

/// Largest codebook drawn explicitly.
pub const CODEBOOK_LIMIT: f64 = 1e7;
/// Largest number of stored codeword symbols.
const SYMBOL_LIMIT: f64 = 1e9;
const TYPE_LIMIT: f64 = 1e5;

/// `min_i a_i - mean(b)`.
pub fn rho_distortion(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return input(format!("sequences must share a length >= 1 ({} vs {})", a.len(), b.len()));
    }
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(min - b.iter().sum::<f64>() / b.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Theta,
    AbsTheta,
    Phi,
}

impl DistortionKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistortionKind::Theta => "theta",
            DistortionKind::AbsTheta => "abs_theta",
            DistortionKind::Phi => "phi",
        }
    }

    /// Block distortion given the summaries of `gen_w` and the mean of `gen_what`.
    fn eval(&self, mean_w: f64, min_w: f64, mean_what: f64) -> f64 {
        match self {
            DistortionKind::Theta => mean_w - mean_what,
            DistortionKind::AbsTheta => (mean_w - mean_what).abs(),
            DistortionKind::Phi => min_w - mean_what,
        }
    }
}

/// Distortion between the generalization-error sequences of `w^m` and `what^m`.
/// For the absolute-value variant of the abs bound, pass `|gen|` sequences with `Theta`.
pub fn block_distortion(kind: DistortionKind, gen_w: &[f64], gen_what: &[f64]) -> Result<f64> {
    if gen_w.len() != gen_what.len() || gen_w.is_empty() {
        return input(format!(
            "sequences must share a length >= 1 ({} vs {})",
            gen_w.len(),
            gen_what.len()
        ));
    }
    let m = gen_w.len() as f64;
    let mean_w = gen_w.iter().sum::<f64>() / m;
    let min_w = gen_w.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(kind.eval(mean_w, min_w, gen_what.iter().sum::<f64>() / m))
}

/// `l_m` sequences of length `m` over the reproduction alphabet, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub m: usize,
    pub alphabet: Vec<String>,
    pub entries: Vec<u16>,
    pub rate: f64,
}

fn codebook_size(m: usize, rate: f64) -> f64 {
    (m as f64 * rate).exp().ceil().max(1.0)
}

impl Codebook {
    /// Draw `ceil(e^{m R})` codewords i.i.d. per coordinate from `marginal`.
    /// Codewords are drawn in order, so a larger rate extends a smaller one.
    pub fn random(marginal: &ProbVec, m: usize, rate: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if m == 0 {
            return input("block length m must be >= 1");
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return input(format!("rate must be finite and >= 0, got {rate}"));
        }
        if marginal.len() > u16::MAX as usize {
            return input("reproduction alphabet too large");
        }
        let l = codebook_size(m, rate);
        if l > CODEBOOK_LIMIT {
            return Err(RdError::Size {
                what: "codebook size ceil(exp(m R)); lower m or R, or use the ensemble engine",
                size: l,
                limit: CODEBOOK_LIMIT,
            });
        }
        if l * m as f64 > SYMBOL_LIMIT {
            return Err(RdError::Size {
                what: "codebook symbols l_m * m",
                size: l * m as f64,
                limit: SYMBOL_LIMIT,
            });
        }
        let sampler = weighted(marginal.weights())?;
        let entries = (0..l as usize * m).map(|_| sampler.sample(rng) as u16).collect();
        Ok(Self {
            m,
            alphabet: marginal.labels().to_vec(),
            entries,
            rate,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn codeword(&self, j: usize) -> &[u16] {
        &self.entries[j * self.m..(j + 1) * self.m]
    }
}

fn weighted(w: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(w.iter().map(|v| v.max(0.0))).map_err(|e| RdError::Input(format!("sampling weights: {e}")))
}

fn rng_for(seed: u64, m: usize, stream: u32) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((m as u64) << 32) | stream as u64);
    r
}

const CODEBOOK_STREAM: u32 = u32::MAX;

/// What is being covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CoverSource {
    /// Pairs `(S, W)` of a learning problem; codewords are hypothesis sequences.
    Problem { problem: FiniteProblem, kind: DistortionKind },
    /// A memoryless source under a per-letter distortion; the block distortion
    /// is the per-letter average.
    Source { p: ProbVec, dist: DistortionMatrix },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CodebookSource {
    #[default]
    BaMarginal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// One explicit codebook per `m`, shared by all trials.
    #[default]
    Explicit,
    /// A fresh random codebook per trial, integrated out exactly given the
    /// source type. Needs integer per-letter distortions.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverConfig {
    #[serde(flatten)]
    pub source: CoverSource,
    pub rate: f64,
    pub epsilon: f64,
    pub m_values: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub codebook: CodebookSource,
    #[serde(default)]
    pub engine: Engine,
}

fn default_trials() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub m_values: Vec<usize>,
    pub error_freq: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// `None` for a plain source with per-letter distortion.
    pub distortion_kind: Option<DistortionKind>,
    pub rate: f64,
    pub epsilon: f64,
    pub engine: Engine,
    pub log_codebook_sizes: Vec<f64>,
    /// Ensemble engine only: exact log error probability per `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_log_error_prob: Option<Vec<f64>>,
    pub note: String,
}

impl SimResult {
    pub fn kind_name(&self) -> &'static str {
        self.distortion_kind.map_or("letter", |k| k.name())
    }
}

/// Per-coordinate view shared by both sources: a symbol alphabet `X` with
/// probabilities, a per-pair distortion table and a block rule.
struct Cover {
    px: Vec<f64>,
    /// `a[x]`: value entering `mean_w`/`min_w` (zero for a plain source).
    a: Vec<f64>,
    /// `b[x][what]`: per-letter term entering `mean_what`.
    b: Vec<Vec<f64>>,
    kind: Option<DistortionKind>,
    repro: ProbVec,
}

impl Cover {
    /// Distortion of a block given summaries of `x^m` and the mean of `b`.
    fn dist(&self, mean_a: f64, min_a: f64, mean_b: f64) -> f64 {
        match self.kind {
            Some(k) => k.eval(mean_a, min_a, mean_b),
            None => mean_b,
        }
    }
}

fn build_cover(cfg: &CoverConfig, opts: &BaOptions) -> Result<Cover> {
    let (px, a, b, kind, ba) = match &cfg.source {
        CoverSource::Problem { problem, kind } => {
            let j = enumerate_joint(problem)?;
            let kw = problem.w.len();
            let px = j.flat();
            let gen = problem.gen_table();
            let mut a = Vec::with_capacity(px.len());
            let mut b = Vec::with_capacity(px.len());
            for s in 0..j.rows() {
                for w in 0..kw {
                    a.push(gen.get(s, w));
                    b.push((0..kw).map(|v| gen.get(s, v)).collect::<Vec<_>>());
                }
            }
            let ba = || -> Result<ProbVec> {
                let cells: Vec<Vec<f64>> = (0..px.len())
                    .map(|x| (0..kw).map(|v| a[x] - b[x][v]).collect())
                    .collect();
                let dm = DistortionMatrix::new(crate::infocore::index_labels(px.len()), problem.w.clone(), cells)?;
                let src = ProbVec::normalized(crate::infocore::index_labels(px.len()), &px)?;
                let c = match kind {
                    DistortionKind::AbsTheta => Constraint::Interval {
                        lo: -cfg.epsilon,
                        hi: cfg.epsilon,
                    },
                    _ => Constraint::Upper { epsilon: cfg.epsilon },
                };
                let pt = rd_at_distortion(&src, &dm, c, opts)?;
                ProbVec::normalized(problem.w.clone(), &pt.channel.output_marginal(src.weights()))
            };
            let repro = match cfg.codebook {
                CodebookSource::BaMarginal => ba()?,
                CodebookSource::Uniform => ProbVec::new(problem.w.clone(), vec![1.0 / kw as f64; kw])?,
            };
            (px, a, b, Some(*kind), repro)
        }
        CoverSource::Source { p, dist } => {
            if dist.rows() != p.len() {
                return Err(RdError::Invariant {
                    invariant: "dimensions match alphabets",
                    detail: "distortion rows must match the source alphabet".into(),
                });
            }
            let repro = match cfg.codebook {
                CodebookSource::BaMarginal => {
                    let pt = rd_at_distortion(p, dist, Constraint::Upper { epsilon: cfg.epsilon }, opts)?;
                    ProbVec::normalized(dist.col_labels().to_vec(), &pt.channel.output_marginal(p.weights()))?
                }
                CodebookSource::Uniform => {
                    ProbVec::new(dist.col_labels().to_vec(), vec![1.0 / dist.cols() as f64; dist.cols()])?
                }
            };
            (
                p.weights().to_vec(),
                vec![0.0; p.len()],
                dist.cells().to_vec(),
                None,
                repro,
            )
        }
    };
    Ok(Cover {
        px,
        a,
        b,
        kind,
        repro: ba,
    })
}

fn validate_cover(cfg: &CoverConfig) -> Result<()> {
    if cfg.trials == 0 {
        return input("trials must be >= 1");
    }
    if cfg.m_values.is_empty() || cfg.m_values.contains(&0) {
        return input("m_values must be non-empty and each m >= 1");
    }
    if !(cfg.rate >= 0.0) || !cfg.rate.is_finite() {
        return input(format!("rate must be finite and >= 0, got {}", cfg.rate));
    }
    if !cfg.epsilon.is_finite() {
        return input("epsilon must be finite");
    }
    Ok(())
}

/// Frequency of the covering error event `min_j d(x^m, what^m(j)) > eps` over
/// independent trials, for each block length.
pub fn simulate_covering(cfg: &CoverConfig, opts: &BaOptions) -> Result<SimResult> {
    validate_cover(cfg)?;
    let cover = build_cover(cfg, opts)?;
    let (freqs, exact) = match cfg.engine {
        Engine::Explicit => (explicit_engine(cfg, &cover)?, None),
        Engine::Ensemble => {
            let (f, e) = ensemble_engine(cfg, &cover)?;
            (f, Some(e))
        }
    };
    let t = cfg.trials as f64;
    Ok(SimResult {
        m_values: cfg.m_values.clone(),
        stderr: freqs.iter().map(|f| (f * (1.0 - f) / t).sqrt()).collect(),
        error_freq: freqs,
        trials: cfg.trials,
        seed: cfg.seed,
        distortion_kind: cover.kind,
        rate: cfg.rate,
        epsilon: cfg.epsilon,
        engine: cfg.engine,
        log_codebook_sizes: cfg.m_values.iter().map(|&m| codebook_size(m, cfg.rate).ln()).collect(),
        exact_log_error_prob: exact,
        note: "random-codebook ensemble; a deterministic book of the same rate is not constructed".into(),
    })
}

fn explicit_engine(cfg: &CoverConfig, cover: &Cover) -> Result<Vec<f64>> {
    let src = weighted(&cover.px)?;
    let mut out = Vec::with_capacity(cfg.m_values.len());
    for &m in &cfg.m_values {
        let book = Codebook::random(&cover.repro, m, cfg.rate, &mut rng_for(cfg.seed, m, CODEBOOK_STREAM))?;
        let errors = crate::par::try_map_range(cfg.trials, |trial| {
            let mut rng = rng_for(cfg.seed, m, trial as u32);
            let xs: Vec<usize> = (0..m).map(|_| src.sample(&mut rng)).collect();
            let mean_a = xs.iter().map(|&x| cover.a[x]).sum::<f64>() / m as f64;
            let min_a = xs.iter().map(|&x| cover.a[x]).fold(f64::INFINITY, f64::min);
            for j in 0..book.len() {
                let cw = book.codeword(j);
                let mean_b = xs.iter().zip(cw).map(|(&x, &v)| cover.b[x][v as usize]).sum::<f64>() / m as f64;
                if cover.kind == Some(DistortionKind::Phi) {
                    let theta = mean_a - mean_b;
                    if min_a - mean_b > theta + 1e-12 {
                        return Err(RdError::Invariant {
                            invariant: "phi <= theta",
                            detail: format!("phi {} exceeds theta {theta}", min_a - mean_b),
                        });
                    }
                }
                if cover.dist(mean_a, min_a, mean_b) <= cfg.epsilon {
                    return Ok(false);
                }
            }
            Ok(true)
        })?;
        out.push(errors.iter().filter(|e| **e).count() as f64 / cfg.trials as f64);
    }
    Ok(out)
}

/// Exact success probability of one random codeword for every source type.
struct TypeTable {
    index: HashMap<Vec<u32>, usize>,
    log_err: Vec<f64>,
    log_type_prob: Vec<f64>,
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(pos: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left as u32;
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v as u32;
            rec(pos + 1, left - v, cur, out);
        }
    }
    rec(0, total, &mut cur, &mut out);
    out
}

fn ln_factorial_table(m: usize) -> Vec<f64> {
    let mut t = vec![0.0; m + 1];
    for i in 1..=m {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn type_table(cfg: &CoverConfig, cover: &Cover, m: usize) -> Result<TypeTable> {
    let k = cover.px.len();
    let q = cover.repro.weights();
    // integer distortion pmf per source letter
    let mut pmf: Vec<Vec<f64>> = Vec::with_capacity(k);
    for row in &cover.b {
        let mut f = Vec::new();
        for (v, &d) in row.iter().enumerate() {
            if q[v] <= 0.0 {
                continue;
            }
            let t = d.round();
            if (d - t).abs() > 1e-12 || t < 0.0 {
                return input("the ensemble engine needs non-negative integer per-letter distortions");
            }
            let t = t as usize;
            if f.len() <= t {
                f.resize(t + 1, 0.0);
            }
            f[t] += q[v];
        }
        pmf.push(f);
    }
    let count = {
        let mut c = 1.0;
        for i in 0..k.saturating_sub(1) {
            c *= (m + 1 + i) as f64 / (i + 1) as f64;
        }
        c
    };
    if count > TYPE_LIMIT {
        return Err(RdError::Size {
            what: "source types",
            size: count,
            limit: TYPE_LIMIT,
        });
    }
    // powers[a][n] = pmf_a convolved n times
    let powers: Vec<Vec<Vec<f64>>> = pmf
        .iter()
        .map(|f| {
            let mut acc = vec![vec![1.0]];
            for n in 1..=m {
                let next = convolve(&acc[n - 1], f);
                acc.push(next);
            }
            acc
        })
        .collect();
    let mf = m as f64;
    let lf = ln_factorial_table(m);
    let log_l = codebook_size(m, cfg.rate).ln();
    let types = compositions(m, k);
    let mut index = HashMap::with_capacity(types.len());
    let mut log_err = Vec::with_capacity(types.len());
    let mut log_type_prob = Vec::with_capacity(types.len());
    for (i, ty) in types.into_iter().enumerate() {
        let mut total = vec![1.0];
        for (a, &n) in ty.iter().enumerate() {
            total = convolve(&total, &powers[a][n as usize]);
        }
        let success: f64 = total
            .iter()
            .enumerate()
            .take_while(|(t, _)| *t as f64 / mf <= cfg.epsilon)
            .map(|(_, v)| v)
            .sum::<f64>()
            .min(1.0);
        let le = if success <= 0.0 {
            0.0
        } else if success >= 1.0 {
            f64::NEG_INFINITY
        } else {
            log_l.exp() * (-success).ln_1p()
        };
        let mut lp = lf[m];
        for (a, &n) in ty.iter().enumerate() {
            lp -= lf[n as usize];
            if n > 0 {
                lp += if cover.px[a] > 0.0 {
                    n as f64 * cover.px[a].ln()
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        index.insert(ty, i);
        log_err.push(le);
        log_type_prob.push(lp);
    }
    Ok(TypeTable {
        index,
        log_err,
        log_type_prob,
    })
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn ensemble_engine(cfg: &CoverConfig, cover: &Cover) -> Result<(Vec<f64>, Vec<f64>)> {
    if cover.kind.is_some() {
        return input("the ensemble engine supports the per-letter source mode only");
    }
    let src = weighted(&cover.px)?;
    let mut freqs = Vec::new();
    let mut exact = Vec::new();
    for &m in &cfg.m_values {
        let tt = type_table(cfg, cover, m)?;
        exact.push(log_sum_exp(tt.log_type_prob.iter().zip(&tt.log_err).map(|(a, b)| a + b)));
        let errs = crate::par::map_range(cfg.trials, |trial| {
            let mut rng = rng_for(cfg.seed, m, trial as u32);
            let mut ty = vec![0u32; cover.px.len()];
            for _ in 0..m {
                ty[src.sample(&mut rng)] += 1;
            }
            let u: f64 = rng.gen();
            u < tt.log_err[tt.index[&ty]].exp()
        });
        freqs.push(errs.iter().filter(|e| **e).count() as f64 / cfg.trials as f64);
    }
    Ok((freqs, exact))
}

/// How the `k` quantization sequences are produced from `X^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantizer {
    /// Sequence `j` is the constant `values[j]`.
    Constant { values: Vec<f64> },
    /// `k` sequences drawn i.i.d. from `dist`, independent of `X^m`.
    Independent { k: usize, dist: RealDist },
    /// `k` sequences `X_i + N_{j,i}` with i.i.d. noise.
    AdditiveNoise { k: usize, noise: RealDist },
}

impl Quantizer {
    fn k(&self) -> usize {
        match self {
            Quantizer::Constant { values } => values.len(),
            Quantizer::Independent { k, .. } | Quantizer::AdditiveNoise { k, .. } => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTailConfig {
    pub x: RealDist,
    pub quantizer: Quantizer,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub epsilon: f64,
    pub m: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn estimate(hits: usize, trials: usize) -> Estimate {
    let p = hits as f64 / trials as f64;
    Estimate {
        value: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTailExact {
    pub lhs: f64,
    pub quantization_tail: f64,
    pub covering_failure: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTailReport {
    /// `P(X >= Delta)^m`, estimated as `P(min_i X_i >= Delta)`.
    pub lhs: Estimate,
    /// `P(exists j: mean(Xhat(j)) >= Delta - eps)`.
    pub quantization_tail: Estimate,
    /// `P(for all j: rho(X^m, Xhat(j)) > eps)`.
    pub covering_failure: Estimate,
    pub rhs: f64,
    pub combined_stderr: f64,
    pub margin: f64,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<BlockTailExact>,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Monte Carlo check of `P(X >= Delta)^m <= P(exists j: mean >= Delta - eps) + P(all rho > eps)`,
/// with closed-form values for constant quantizers.
pub fn verify_block_tail(cfg: &BlockTailConfig) -> Result<BlockTailReport> {
    if cfg.trials == 0 {
        return input("trials must be >= 1");
    }
    if cfg.m == 0 {
        return input("m must be >= 1");
    }
    let k = cfg.quantizer.k();
    if k == 0 {
        return input("need at least one quantization sequence");
    }
    let xs = weighted(&cfg.x.probs)?;
    let qs = match &cfg.quantizer {
        Quantizer::Independent { dist, .. } => Some(weighted(&dist.probs)?),
        Quantizer::AdditiveNoise { noise, .. } => Some(weighted(&noise.probs)?),
        Quantizer::Constant { .. } => None,
    };
    let m = cfg.m;
    let mf = m as f64;
    let thr = cfg.big_delta - cfg.epsilon;
    let hits = crate::par::map_range(cfg.trials, |trial| {
        let mut rng = rng_for(cfg.seed, m, trial as u32);
        let x: Vec<f64> = (0..m).map(|_| cfg.x.values[xs.sample(&mut rng)]).collect();
        let min_x = x.iter().copied().fold(f64::INFINITY, f64::min);
        let mut any_tail = false;
        let mut all_fail = true;
        for j in 0..k {
            let sum: f64 = match &cfg.quantizer {
                Quantizer::Constant { values } => values[j] * mf,
                Quantizer::Independent { dist, .. } => {
                    let s = qs.as_ref().expect("sampler");
                    (0..m).map(|_| dist.values[s.sample(&mut rng)]).sum()
                }
                Quantizer::AdditiveNoise { noise, .. } => {
                    let s = qs.as_ref().expect("sampler");
                    x.iter().map(|xi| xi + noise.values[s.sample(&mut rng)]).sum()
                }
            };
            let mean = sum / mf;
            any_tail |= mean >= thr;
            all_fail &= min_x - mean > cfg.epsilon;
        }
        (min_x >= cfg.big_delta, any_tail, all_fail)
    });
    let count = |f: fn(&(bool, bool, bool)) -> bool| hits.iter().filter(|h| f(h)).count();
    let lhs = estimate(count(|h| h.0), cfg.trials);
    let q = estimate(count(|h| h.1), cfg.trials);
    let c = estimate(count(|h| h.2), cfg.trials);
    let rhs = q.value + c.value;
    let combined = (lhs.stderr.powi(2) + q.stderr.powi(2) + c.stderr.powi(2)).sqrt();
    let exact = match &cfg.quantizer {
        Quantizer::Constant { values } => {
            let p_ge = cfg.x.upper_tail(cfg.big_delta);
            let cmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p_gt: f64 = cfg
                .x
                .values
                .iter()
                .zip(&cfg.x.probs)
                .filter(|(v, _)| **v - cmax > cfg.epsilon)
                .map(|(_, p)| p)
                .sum();
            let qt = if values.iter().any(|c| *c >= thr) { 1.0 } else { 0.0 };
            let cf = p_gt.min(1.0).powi(m as i32);
            Some(BlockTailExact {
                lhs: p_ge.min(1.0).powi(m as i32),
                quantization_tail: qt,
                covering_failure: cf,
                rhs: qt + cf,
            })
        }
        _ => None,
    };
    Ok(BlockTailReport {
        margin: rhs - lhs.value,
        holds: lhs.value <= rhs + 3.0 * combined,
        lhs,
        quantization_tail: q,
        covering_failure: c,
        rhs,
        combined_stderr: combined,
        exact,
        m,
        trials: cfg.trials,
        seed: cfg.seed,
    })
}

fn log_mean_exp(p: &[f64], phi: &[f64]) -> f64 {
    log_sum_exp(
        p.iter()
            .zip(phi)
            .filter(|(w, _)| **w > ZERO_WEIGHT)
            .map(|(w, f)| w.ln() + f),
    )
}

/// `E_q[phi] - log E_p[e^phi]`.
pub fn dv_rhs(p: &ProbVec, q: &ProbVec, phi: &[f64]) -> f64 {
    let eq: f64 = q
        .weights()
        .iter()
        .zip(phi)
        .filter(|(w, _)| **w > ZERO_WEIGHT)
        .map(|(w, f)| w * f)
        .sum();
    eq - log_mean_exp(p.weights(), phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Right side at `phi = log(q/p)`.
    pub optimizer_rhs: f64,
    pub optimizer_gap: f64,
    /// Largest change of the right side under `phi -> phi + c` over the scan.
    pub shift_max_deviation: f64,
    pub holds: bool,
}

/// Largest `|rhs(phi + c) - rhs(phi)|` over `points` shifts in `[-50, 50]`.
pub fn dv_shift_scan(p: &ProbVec, q: &ProbVec, phi: &[f64], points: usize) -> f64 {
    let base = dv_rhs(p, q, phi);
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let c = -50.0 + 100.0 * i as f64 / (points.max(2) - 1) as f64;
        let shifted: Vec<f64> = phi.iter().map(|f| f + c).collect();
        worst = worst.max((dv_rhs(p, q, &shifted) - base).abs());
    }
    worst
}

/// Donsker-Varadhan: `D(q||p) >= E_q[phi] - log E_p[e^phi]`.
pub fn dv_check(p: &ProbVec, q: &ProbVec, phi: &[f64], shift_points: usize) -> Result<DvReport> {
    if !p.same_alphabet(q) {
        return input("p and q must share an alphabet");
    }
    if phi.len() != p.len() || phi.iter().any(|f| !f.is_finite()) {
        return input("phi must be finite with one value per symbol");
    }
    let lhs = kl_of(q.weights(), p.weights());
    let rhs = dv_rhs(p, q, phi);
    let (optimizer_rhs, optimizer_gap) = if lhs.is_finite() {
        let opt: Vec<f64> = q
            .weights()
            .iter()
            .zip(p.weights())
            .map(|(a, b)| if *a > ZERO_WEIGHT { (a / b).ln() } else { -1e300 })
            .collect();
        let r = dv_rhs(p, q, &opt);
        (r, lhs - r)
    } else {
        (f64::INFINITY, 0.0)
    };
    let gap = lhs - rhs;
    Ok(DvReport {
        lhs,
        rhs,
        gap,
        optimizer_rhs,
        optimizer_gap,
        shift_max_deviation: dv_shift_scan(p, q, phi, shift_points),
        holds: !(gap < -1e-12),
    })
}

/// `D(nu||mu) + log E_mu[e^{lambda X}]` over the support of `nu`.
pub fn variational_mean_objective(nu: &RealDist, mu: &[f64], lambda: f64) -> f64 {
    let kl = kl_of(&nu.probs, mu);
    let scaled: Vec<f64> = nu.values.iter().map(|x| lambda * x).collect();
    kl + log_mean_exp(mu, &scaled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalMeanReport {
    pub expected: f64,
    pub lambda: f64,
    /// Objective at `mu ∝ e^{-lambda x} nu`, divided by `lambda`.
    pub value_at_minimizer: f64,
    pub abs_error: f64,
    pub random_trials: usize,
    /// Smallest `objective(mu)/lambda - E[X]` over random `mu`.
    pub random_min_gap: f64,
    pub violations: usize,
}

/// Variational form of the mean: `E_nu[X] = inf_mu [D(nu||mu) + log E_mu e^{lambda X}] / lambda`.
pub fn variational_mean_check(nu: &RealDist, lambda: f64, random_trials: usize, seed: u64) -> Result<VariationalMeanReport> {
    if lambda == 0.0 || !lambda.is_finite() {
        return input("lambda must be finite and nonzero");
    }
    let expected = nu.mean();
    let logw: Vec<f64> = nu
        .probs
        .iter()
        .zip(&nu.values)
        .map(|(p, x)| if *p > ZERO_WEIGHT { p.ln() - lambda * x } else { f64::NEG_INFINITY })
        .collect();
    let lz = log_sum_exp(logw.iter().copied());
    let mu: Vec<f64> = logw.iter().map(|l| (l - lz).exp()).collect();
    let value = variational_mean_objective(nu, &mu, lambda) / lambda;
    let mut rng = rng_for(seed, 0, 0);
    let mut min_gap = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..random_trials {
        let raw: Vec<f64> = (0..nu.values.len()).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = raw.iter().sum();
        let mu_r: Vec<f64> = raw.iter().map(|v| v / s).collect();
        // dividing by a negative lambda flips the inequality, so compare the raw objective
        let obj = variational_mean_objective(nu, &mu_r, lambda);
        let g = obj - lambda * expected;
        if g < -1e-12 * (1.0 + (lambda * expected).abs()) {
            violations += 1;
        }
        min_gap = min_gap.min(g / lambda.abs());
    }
    Ok(VariationalMeanReport {
        expected,
        lambda,
        value_at_minimizer: value,
        abs_error: (value - expected).abs(),
        random_trials,
        random_min_gap: min_gap,
        violations,
    })
}

/// Objective of the variational tail representation for one `nu`, with the inner
/// infimum over quantizer laws and `lambda >= 0` taken in closed form.
pub fn variational_objective(mu: &RealDist, nu: &[f64], big_delta: f64) -> f64 {
    let min_supp = mu
        .values
        .iter()
        .zip(nu)
        .filter(|(_, w)| **w > ZERO_WEIGHT)
        .map(|(v, _)| *v)
        .fold(f64::INFINITY, f64::min);
    // the cheapest quantizer mean is min supp(nu) - eps, so the bracket is
    // [Delta - min supp(nu)]_+ whatever eps is; any positive bracket sends lambda to infinity
    if big_delta > min_supp {
        return f64::NEG_INFINITY;
    }
    -kl_of(nu, &mu.probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalTailReport {
    pub log_tail: f64,
    pub objective_at_restriction: f64,
    pub abs_error: f64,
    pub grid_points: usize,
    pub grid_max: f64,
    pub grid_excess: f64,
    pub degenerate: bool,
}

/// Check `log P(X >= Delta)` against its variational form on the restriction of
/// `mu` to `[Delta, inf)` and on a simplex grid of `nu`.
pub fn variational_tail_check(mu: &RealDist, big_delta: f64, epsilon: f64, resolution: usize) -> Result<VariationalTailReport> {
    if !epsilon.is_finite() || !big_delta.is_finite() {
        return input("Delta and epsilon must be finite");
    }
    if resolution == 0 {
        return input("grid resolution must be >= 1");
    }
    let tail = mu.upper_tail(big_delta);
    if tail <= 0.0 {
        return Ok(VariationalTailReport {
            log_tail: f64::NEG_INFINITY,
            objective_at_restriction: f64::NEG_INFINITY,
            abs_error: 0.0,
            grid_points: 0,
            grid_max: f64::NEG_INFINITY,
            grid_excess: 0.0,
            degenerate: true,
        });
    }
    let log_tail = tail.ln();
    let restricted: Vec<f64> = mu
        .values
        .iter()
        .zip(&mu.probs)
        .map(|(v, p)| if *v >= big_delta { p / tail } else { 0.0 })
        .collect();
    let at = variational_objective(mu, &restricted, big_delta);
    let supp: Vec<usize> = (0..mu.probs.len()).filter(|&i| mu.probs[i] > ZERO_WEIGHT).collect();
    let mut count = 1.0;
    for i in 0..supp.len().saturating_sub(1) {
        count *= (resolution + 1 + i) as f64 / (i + 1) as f64;
    }
    if count > 2e6 {
        return Err(RdError::Size {
            what: "variational grid points",
            size: count,
            limit: 2e6,
        });
    }
    let mut grid_max = f64::NEG_INFINITY;
    let comps = compositions(resolution, supp.len());
    for c in &comps {
        let mut nu = vec![0.0; mu.probs.len()];
        for (&i, &n) in supp.iter().zip(c) {
            nu[i] = n as f64 / resolution as f64;
        }
        grid_max = grid_max.max(variational_objective(mu, &nu, big_delta));
    }
    Ok(VariationalTailReport {
        log_tail,
        objective_at_restriction: at,
        abs_error: (at - log_tail).abs(),
        grid_points: comps.len(),
        grid_max,
        grid_excess: (grid_max - log_tail).max(0.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_examples() {
        assert_eq!(rho_distortion(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rho_distortion(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap(), 1.0);
        let r = rho_distortion(&[0.5, -0.2], &[0.1, 0.3]).unwrap();
        assert!((r + 0.4).abs() < 1e-15);
        assert!(rho_distortion(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn block_examples() {
        let a = [0.3, 0.1];
        let z = [0.0, 0.0];
        assert!((block_distortion(DistortionKind::Theta, &a, &z).unwrap() - 0.2).abs() < 1e-15);
        assert!((block_distortion(DistortionKind::Phi, &a, &z).unwrap() - 0.1).abs() < 1e-15);
        let c = [0.4; 5];
        for k in [DistortionKind::Theta, DistortionKind::AbsTheta, DistortionKind::Phi] {
            assert!(block_distortion(k, &c, &c).unwrap().abs() < 1e-15);
        }
        // identical but non-constant: phi is min minus mean, so strictly negative
        assert!((block_distortion(DistortionKind::Phi, &a, &a).unwrap() + 0.1).abs() < 1e-15);
    }

    fn bern_cfg(rate: f64, m: Vec<usize>, engine: Engine) -> CoverConfig {
        CoverConfig {
            source: CoverSource::Source {
                p: ProbVec::bernoulli(0.5).unwrap(),
                dist: DistortionMatrix::hamming(2),
            },
            rate,
            epsilon: 0.11,
            m_values: m,
            trials: 300,
            seed: 7,
            codebook: CodebookSource::BaMarginal,
            engine,
        }
    }

    #[test]
    fn ensemble_single_type_matches_closed_form() {
        // every binary sequence sees the same per-codeword success probability
        let r = simulate_covering(&bern_cfg(0.3, vec![20], Engine::Ensemble), &BaOptions::default()).unwrap();
        let m = 20usize;
        let mut succ = 0.0;
        let mut c = 1.0;
        for t in 0..=2 {
            if t > 0 {
                c *= (m - t + 1) as f64 / t as f64;
            }
            succ += c * 0.5f64.powi(m as i32);
        }
        let l = (m as f64 * 0.3).exp().ceil();
        let want = l * (-succ).ln_1p();
        let got = r.exact_log_error_prob.unwrap()[0];
        assert!((got - want).abs() < 1e-9 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn explicit_engine_is_reproducible_and_monotone_in_rate() {
        let opts = BaOptions::default();
        let a = simulate_covering(&bern_cfg(0.2, vec![8, 16], Engine::Explicit), &opts).unwrap();
        let b = simulate_covering(&bern_cfg(0.2, vec![8, 16], Engine::Explicit), &opts).unwrap();
        assert_eq!(a, b);
        let hi = simulate_covering(&bern_cfg(0.4, vec![8, 16], Engine::Explicit), &opts).unwrap();
        for (x, y) in a.error_freq.iter().zip(&hi.error_freq) {
            assert!(y <= x);
        }
    }

    #[test]
    fn codebook_cap() {
        let e = simulate_covering(&bern_cfg(0.45, vec![50], Engine::Explicit), &BaOptions::default()).unwrap_err();
        assert!(matches!(e, RdError::Size { .. }));
    }

    #[test]
    fn block_tail_equality_example() {
        let cfg = BlockTailConfig {
            x: RealDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap(),
            quantizer: Quantizer::Constant { values: vec![0.0] },
            big_delta: 0.5,
            epsilon: 0.0,
            m: 6,
            trials: 4000,
            seed: 3,
        };
        let r = verify_block_tail(&cfg).unwrap();
        let ex = r.exact.unwrap();
        assert_eq!(ex.lhs, 0.5f64.powi(6));
        assert_eq!(ex.rhs, 0.5f64.powi(6));
        assert!(r.holds);
        // both sides are the same event in this example
        assert_eq!(r.lhs.value, r.covering_failure.value);
    }

    #[test]
    fn dv_examples() {
        let p = ProbVec::from_weights(vec![0.2, 0.3, 0.5]).unwrap();
        let q = ProbVec::from_weights(vec![0.5, 0.25, 0.25]).unwrap();
        let r = dv_check(&p, &q, &[0.0; 3], 100).unwrap();
        assert!(r.rhs.abs() < 1e-15 && r.holds);
        assert!(r.optimizer_gap.abs() < 1e-12);
        let r = dv_check(&p, &q, &[1.0, -2.0, 0.5], 1000).unwrap();
        assert!(r.gap >= 0.0 && r.shift_max_deviation < 1e-12);
    }

    #[test]
    fn variational_mean_examples() {
        let nu = RealDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let r = variational_mean_check(&nu, 1.0, 200, 1).unwrap();
        assert!((r.value_at_minimizer - 0.5).abs() < 1e-12);
        assert_eq!(r.violations, 0);
        let pt = RealDist::new(vec![3.0], vec![1.0]).unwrap();
        assert!((variational_mean_check(&pt, -2.0, 10, 1).unwrap().value_at_minimizer - 3.0).abs() < 1e-12);
    }

    #[test]
    fn variational_examples() {
        let mu = RealDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let r = variational_tail_check(&mu, 0.5, 0.0, 10).unwrap();
        assert!((r.objective_at_restriction - 0.5f64.ln()).abs() < 1e-12);
        let r = variational_tail_check(&mu, -1.0, 0.3, 10).unwrap();
        assert!(r.objective_at_restriction.abs() < 1e-12);
        let mu = RealDist::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        let r = variational_tail_check(&mu, 1.0, 0.1, 40).unwrap();
        assert!((r.objective_at_restriction - 0.8f64.ln()).abs() < 1e-12);
        assert!(r.grid_excess <= 1e-9);
        assert!(variational_tail_check(&mu, 5.0, 0.0, 10).unwrap().degenerate);
    }
}
