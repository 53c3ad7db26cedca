//! Rate-distortion solvers on finite alphabets.
//!
//! Blahut-Arimoto at a fixed slope is the workhorse. Constrained solves
//! bisect on the slope and finish by mixing the two bracketing channels so
//! the returned channel meets the constraint exactly; the reported rate is
//! always the mutual information of the returned channel.

use serde::{Deserialize, Serialize};

use crate::error::{input, RdError, Result};
use crate::infocore::{
    binary_entropy, channel_mutual_information, entropy_of, index_labels, kl_of, Channel,
    JointTable, ProbVec, ZERO_WEIGHT,
};

/// Distortion (or loss-difference) table; entries may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist")]
pub struct DistortionMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cells: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawDist {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cells: Vec<Vec<f64>>,
}

impl TryFrom<RawDist> for DistortionMatrix {
    type Error = RdError;
    fn try_from(raw: RawDist) -> Result<Self> {
        DistortionMatrix::new(raw.row_labels, raw.col_labels, raw.cells)
    }
}

impl DistortionMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, cells: Vec<Vec<f64>>) -> Result<Self> {
        if row_labels.is_empty() || col_labels.is_empty() {
            return Err(RdError::Invariant {
                invariant: "dimensions match alphabets",
                detail: "empty alphabet".into(),
            });
        }
        if cells.len() != row_labels.len() || cells.iter().any(|r| r.len() != col_labels.len()) {
            return Err(RdError::Invariant {
                invariant: "dimensions match alphabets",
                detail: format!(
                    "distortion matrix is not {}x{}",
                    row_labels.len(),
                    col_labels.len()
                ),
            });
        }
        if let Some((i, j)) = cells
            .iter()
            .enumerate()
            .find_map(|(i, r)| r.iter().position(|v| !v.is_finite()).map(|j| (i, j)))
        {
            return Err(RdError::Invariant {
                invariant: "all entries finite",
                detail: format!("entry ({i}, {j}) is {}", cells[i][j]),
            });
        }
        Ok(Self {
            row_labels,
            col_labels,
            cells,
        })
    }

    pub fn from_cells(cells: Vec<Vec<f64>>) -> Result<Self> {
        let r = cells.len();
        let c = cells.first().map_or(0, |row| row.len());
        Self::new(index_labels(r), index_labels(c), cells)
    }

    /// 0/1 distortion between equal-size alphabets.
    pub fn hamming(k: usize) -> Self {
        let cells = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        Self {
            row_labels: index_labels(k),
            col_labels: index_labels(k),
            cells,
        }
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cells[r][c]
    }

    /// Every entry plus `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.cells.iter_mut().flatten().for_each(|v| *v += c);
        out
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.cells.iter_mut().flatten().for_each(|v| *v = -*v);
        out
    }

    /// Expected distortion of `channel` under `source`.
    pub fn expected(&self, source: &[f64], channel: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for ((p, row), crow) in source.iter().zip(&self.cells).zip(channel) {
            if *p <= 0.0 {
                continue;
            }
            acc += p * row.iter().zip(crow).map(|(d, c)| d * c).sum::<f64>();
        }
        acc
    }

    /// Mean of each column under `source`.
    pub fn column_means(&self, source: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.cols()];
        for (p, row) in source.iter().zip(&self.cells) {
            for (acc, d) in m.iter_mut().zip(row) {
                *acc += p * d;
            }
        }
        m
    }
}

/// One traced point of a rate-distortion function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// Requested distortion level (for fixed-slope solves, the achieved one).
    pub epsilon: f64,
    /// Achieved expected distortion of `channel`.
    pub distortion: f64,
    /// Mutual information of `channel` under the source, in nats.
    pub rate: f64,
    /// Lagrange slope; `None` at the minimum-distortion endpoint.
    pub slope: Option<f64>,
    pub channel: Channel,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub eps_grid: Vec<f64>,
    pub rates: Vec<f64>,
    /// Root-mean-square residual of the linear fit, in nats.
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Constraint on the expected distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Upper { epsilon: f64 },
    Interval { lo: f64, hi: f64 },
}

const PRUNE: f64 = 1e-14;

struct BaRun {
    q: Vec<f64>,
    rows: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
    gap: f64,
}

/// Core iteration on a precomputed kernel `e[w][j] = exp(-s * (d[w][j] - min_j d[w][j]))`
/// (or a 0/1 mask). Returns the final marginal and channel.
fn ba_kernel(p: &[f64], e: &[Vec<f64>], q0: Option<&[f64]>, opts: &BaOptions) -> Result<BaRun> {
    let k = e[0].len();
    let mut q = match q0 {
        Some(q0) if q0.len() == k && q0.iter().sum::<f64>() > 0.0 => q0.to_vec(),
        _ => vec![1.0 / k as f64; k],
    };
    let mut chat = vec![0.0; k];
    let mut prev = f64::NAN;
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut reactivated = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter.max(1) {
        iterations = it + 1;
        chat.iter_mut().for_each(|c| *c = 0.0);
        let mut f = 0.0;
        for (pw, ew) in p.iter().zip(e) {
            if *pw <= ZERO_WEIGHT {
                continue;
            }
            let z: f64 = q.iter().zip(ew).map(|(a, b)| a * b).sum();
            if z <= 0.0 {
                // every admissible column pruned: restart from uniform
                q = vec![1.0 / k as f64; k];
                prev = f64::NAN;
                reactivated = true;
                break;
            }
            f -= pw * z.ln();
            for (c, ev) in chat.iter_mut().zip(ew) {
                *c += pw * ev / z;
            }
        }
        if reactivated {
            reactivated = false;
            continue;
        }
        let cmax = chat.iter().copied().fold(0.0, f64::max);
        gap = cmax.ln().max(0.0);
        let scale = f.abs().max(1.0);
        if prev.is_finite() && f > prev + 1e-12 * scale {
            return Err(RdError::Invariant {
                invariant: "Lagrangian objective nonincreasing",
                detail: format!("iteration {it}: {prev:e} -> {f:e}"),
            });
        }
        let settled = prev.is_finite() && (prev - f).abs() <= opts.tol * scale && gap <= opts.tol * scale;
        prev = f;
        if settled {
            converged = true;
            break;
        }
        for (qj, c) in q.iter_mut().zip(&chat) {
            *qj *= c;
        }
        let mut touched = false;
        for (qj, c) in q.iter_mut().zip(&chat) {
            if *qj < PRUNE {
                *qj = 0.0;
                if *c > 1.0 + 1e-9 {
                    *qj = 1e-8;
                    touched = true;
                }
            }
        }
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        if touched {
            prev = f64::NAN;
        }
    }
    let rows = e
        .iter()
        .map(|ew| {
            let z: f64 = q.iter().zip(ew).map(|(a, b)| a * b).sum();
            if z > 0.0 {
                q.iter().zip(ew).map(|(a, b)| a * b / z).collect()
            } else {
                let m = ew.iter().copied().fold(0.0, f64::max);
                let hits: Vec<f64> = ew.iter().map(|v| if *v == m { 1.0 } else { 0.0 }).collect();
                let n: f64 = hits.iter().sum();
                hits.into_iter().map(|v| v / n).collect()
            }
        })
        .collect();
    Ok(BaRun {
        q,
        rows,
        iterations,
        converged,
        gap,
    })
}

/// Solver view of a source and distortion matrix.
struct Problem<'a> {
    p: &'a [f64],
    dist: &'a DistortionMatrix,
    row_min: Vec<f64>,
    row_max: Vec<f64>,
    spread: f64,
}

impl<'a> Problem<'a> {
    fn new(source: &'a ProbVec, dist: &'a DistortionMatrix) -> Result<Self> {
        if source.len() != dist.rows() {
            return input(format!(
                "source has {} symbols but distortion matrix has {} rows",
                source.len(),
                dist.rows()
            ));
        }
        let row_min: Vec<f64> = dist.cells.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let row_max: Vec<f64> = dist.cells.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let spread = source
            .weights()
            .iter()
            .zip(row_min.iter().zip(&row_max))
            .filter(|(p, _)| **p > ZERO_WEIGHT)
            .map(|(_, (a, b))| b - a)
            .fold(0.0, f64::max);
        Ok(Self {
            p: source.weights(),
            dist,
            row_min,
            row_max,
            spread,
        })
    }

    fn d_min(&self) -> f64 {
        self.p.iter().zip(&self.row_min).map(|(p, m)| p * m).sum()
    }

    fn d_max(&self) -> f64 {
        self.p.iter().zip(&self.row_max).map(|(p, m)| p * m).sum()
    }

    fn tol(&self) -> f64 {
        1e-12 * (1.0 + self.spread)
    }

    fn kernel(&self, s: f64) -> Vec<Vec<f64>> {
        self.dist
            .cells
            .iter()
            .zip(&self.row_min)
            .map(|(r, m)| r.iter().map(|d| (-s * (d - m)).exp()).collect())
            .collect()
    }

    fn mask(&self) -> Vec<Vec<f64>> {
        let t = self.tol();
        self.dist
            .cells
            .iter()
            .zip(&self.row_min)
            .map(|(r, m)| r.iter().map(|d| if d - m <= t { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn point(&self, rows: Vec<Vec<f64>>, epsilon: Option<f64>, slope: Option<f64>, iterations: usize) -> RdPoint {
        let rate = channel_mutual_information(self.p, &rows);
        let distortion = self.dist.expected(self.p, &rows);
        let channel = Channel::from_rows_normalizing(
            self.dist.row_labels.clone(),
            self.dist.col_labels.clone(),
            rows,
        );
        RdPoint {
            epsilon: epsilon.unwrap_or(distortion),
            distortion,
            rate,
            slope,
            channel,
            iterations,
        }
    }

    fn constant(&self, q: &[f64], epsilon: Option<f64>) -> RdPoint {
        let rows = vec![q.to_vec(); self.dist.rows()];
        let mut pt = self.point(rows, epsilon, Some(0.0), 0);
        pt.rate = 0.0;
        pt
    }

    fn best_column(&self) -> (usize, f64) {
        let m = self.dist.column_means(self.p);
        let mut best = 0;
        for (j, v) in m.iter().enumerate() {
            if *v < m[best] {
                best = j;
            }
        }
        (best, m[best])
    }

    fn unit(&self, j: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.dist.cols()];
        q[j] = 1.0;
        q
    }

    fn infeasible(&self, requested: String) -> RdError {
        RdError::Infeasible {
            requested,
            min: self.d_min(),
            max: self.d_max(),
        }
    }
}

/// Blahut-Arimoto at slope `-s`.
pub fn ba_fixed_slope(source: &ProbVec, dist: &DistortionMatrix, s: f64, opts: &BaOptions) -> Result<RdPoint> {
    if !(s >= 0.0) || !s.is_finite() {
        return input(format!("slope must be finite and >= 0, got {s}"));
    }
    if !(opts.tol > 0.0) {
        return input("tolerance must be positive");
    }
    let pr = Problem::new(source, dist)?;
    if s == 0.0 {
        let (j, _) = pr.best_column();
        return Ok(pr.constant(&pr.unit(j), None));
    }
    let run = ba_kernel(pr.p, &pr.kernel(s), None, opts)?;
    let pt = pr.point(run.rows, None, Some(s), run.iterations);
    if !run.converged {
        return Err(RdError::Convergence {
            iterations: run.iterations,
            gap: run.gap,
            last: Box::new(pt),
        });
    }
    Ok(pt)
}

/// Minimum rate subject to the distortion constraint.
pub fn rd_at_distortion(
    source: &ProbVec,
    dist: &DistortionMatrix,
    constraint: Constraint,
    opts: &BaOptions,
) -> Result<RdPoint> {
    match constraint {
        Constraint::Upper { epsilon } => {
            if !epsilon.is_finite() {
                return input("epsilon must be finite");
            }
            let pr = Problem::new(source, dist)?;
            solve_upper(&pr, epsilon, opts)
        }
        Constraint::Interval { lo, hi } => {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return input(format!("interval [{lo}, {hi}] is empty or not finite"));
            }
            let pr = Problem::new(source, dist)?;
            let t = pr.tol();
            if hi < pr.d_min() - t || lo > pr.d_max() + t {
                return Err(pr.infeasible(format!("[{lo}, {hi}]")));
            }
            let m = dist.column_means(pr.p);
            let (jmin, mmin) = pr.best_column();
            let (jmax, mmax) = m
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc });
            if hi >= mmin && lo <= mmax {
                // a constant reproduction meets the interval
                let target = lo.max(mmin);
                let mut q = vec![0.0; dist.cols()];
                if mmax > mmin {
                    let w = (target - mmin) / (mmax - mmin);
                    q[jmin] += 1.0 - w;
                    q[jmax] += w;
                } else {
                    q[jmin] = 1.0;
                }
                let mid = 0.5 * (lo + hi);
                return Ok(pr.constant(&q, Some(mid)));
            }
            if hi < mmin {
                let mut pt = solve_upper(&pr, hi, opts)?;
                pt.epsilon = hi;
                return Ok(pt);
            }
            let neg = dist.negated();
            let prn = Problem::new(source, &neg)?;
            let pt = solve_upper(&prn, -lo, opts)?;
            let rows = pt.channel.rows().to_vec();
            let mut out = pr.point(rows, Some(lo), pt.slope.map(|s| -s), pt.iterations);
            out.rate = pt.rate;
            Ok(out)
        }
    }
}

fn mix(a: &[Vec<f64>], b: &[Vec<f64>], wb: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (1.0 - wb) * x + wb * y).collect())
        .collect()
}

struct Bracket {
    s: f64,
    d: f64,
    rows: Vec<Vec<f64>>,
    q: Vec<f64>,
    iterations: usize,
}

fn solve_upper(pr: &Problem, epsilon: f64, opts: &BaOptions) -> Result<RdPoint> {
    let t = pr.tol();
    let dmin = pr.d_min();
    if epsilon < dmin - t {
        return Err(pr.infeasible(format!("<= {epsilon}")));
    }
    let (jbest, mbest) = pr.best_column();
    if epsilon >= mbest {
        return Ok(pr.constant(&pr.unit(jbest), Some(epsilon)));
    }
    let masked = || -> Result<Bracket> {
        let run = ba_kernel(pr.p, &pr.mask(), None, opts)?;
        let d = pr.dist.expected(pr.p, &run.rows);
        Ok(Bracket {
            s: f64::INFINITY,
            d,
            rows: run.rows,
            q: run.q,
            iterations: run.iterations,
        })
    };
    if epsilon <= dmin + t {
        let b = masked()?;
        return Ok(pr.point(b.rows, Some(epsilon), None, b.iterations));
    }

    let solve = |s: f64, q0: Option<&[f64]>| -> Result<Bracket> {
        let run = ba_kernel(pr.p, &pr.kernel(s), q0, opts)?;
        let d = pr.dist.expected(pr.p, &run.rows);
        Ok(Bracket {
            s,
            d,
            rows: run.rows,
            q: run.q,
            iterations: run.iterations,
        })
    };

    let mut iterations = 0;
    let unit = pr.unit(jbest);
    let mut lo = Bracket {
        s: 0.0,
        d: mbest,
        rows: vec![unit.clone(); pr.dist.rows()],
        q: unit,
        iterations: 0,
    };
    let mut hi: Option<Bracket> = None;
    let mut s = 1.0 / pr.spread.max(1e-300);
    let mut warm: Option<Vec<f64>> = None;
    for _ in 0..200 {
        let b = solve(s, warm.as_deref())?;
        iterations += b.iterations;
        warm = Some(b.q.clone());
        if b.d <= epsilon {
            hi = Some(b);
            break;
        }
        lo = b;
        s *= 2.0;
        if !s.is_finite() {
            break;
        }
    }
    let mut hi = match hi {
        Some(h) => h,
        None => {
            let b = masked()?;
            iterations += b.iterations;
            b
        }
    };
    if hi.s.is_finite() {
        // Illinois regula falsi on d(s) = epsilon. The mixture's rate error is
        // at most (s_hi - s_lo) * min(d_lo - eps, eps - d_hi), so stop on that.
        let (mut flo, mut fhi) = (lo.d - epsilon, hi.d - epsilon);
        let mut side = 0i8;
        for _ in 0..200 {
            let chord = (hi.s - lo.s) * flo.min(-fhi).max(0.0);
            if chord <= 1e-3 * opts.tol || hi.s - lo.s <= 1e-13 * hi.s {
                break;
            }
            let mut mid = hi.s - fhi * (hi.s - lo.s) / (fhi - flo);
            if !(mid > lo.s && mid < hi.s) {
                mid = 0.5 * (lo.s + hi.s);
            }
            let b = solve(mid, Some(&hi.q))?;
            iterations += b.iterations;
            if b.d <= epsilon {
                hi = b;
                fhi = hi.d - epsilon;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            } else {
                lo = b;
                flo = lo.d - epsilon;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            }
        }
    }
    let rows = if lo.d > hi.d {
        let wb = ((lo.d - epsilon) / (lo.d - hi.d)).clamp(0.0, 1.0);
        mix(&lo.rows, &hi.rows, wb)
    } else {
        hi.rows.clone()
    };
    let slope = if hi.s.is_finite() {
        Some(0.5 * (lo.s + hi.s))
    } else {
        None
    };
    let mut pt = pr.point(rows, Some(epsilon), slope, iterations);
    if pt.distortion > epsilon && pt.distortion - epsilon <= 1e-9 {
        // rounding in the mixture; keep the reported level honest
        pt.epsilon = epsilon;
    }
    Ok(pt)
}

/// Rate-distortion curve at the given distortion levels (sorted ascending).
pub fn rd_curve(source: &ProbVec, dist: &DistortionMatrix, eps: &[f64], opts: &BaOptions) -> Result<RdCurve> {
    let mut levels = eps.to_vec();
    levels.sort_by(f64::total_cmp);
    let points = levels
        .iter()
        .map(|&e| rd_at_distortion(source, dist, Constraint::Upper { epsilon: e }, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdCurve { points })
}

/// Continuous families with closed-form rate-distortion functions.
/// `epsilon` is the total distortion over the `d` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    GaussianSq { d: f64, sigma2: f64 },
    BernoulliHamming { d: f64 },
    LaplaceL1 { d: f64, lambda: f64 },
}

pub fn closed_form_rd(family: Family, epsilon: f64) -> Result<f64> {
    match family {
        Family::GaussianSq { d, sigma2 } => {
            if !(d > 0.0 && sigma2 > 0.0) {
                return input("gaussian_sq needs d > 0 and sigma2 > 0");
            }
            if !(epsilon > 0.0) {
                return input(format!("gaussian_sq needs epsilon > 0, got {epsilon}"));
            }
            Ok((0.5 * d * (d * sigma2 / epsilon).ln()).max(0.0))
        }
        Family::BernoulliHamming { d } => {
            if !(d > 0.0) {
                return input("bernoulli_hamming needs d > 0");
            }
            if epsilon < 0.0 {
                return input(format!("bernoulli_hamming needs epsilon >= 0, got {epsilon}"));
            }
            if epsilon > d {
                return Ok(0.0);
            }
            // R(D) for a uniform bit reaches zero at D = 1/2
            let frac = (epsilon / d).min(0.5);
            Ok((d * std::f64::consts::LN_2 - d * binary_entropy(frac)?).max(0.0))
        }
        Family::LaplaceL1 { d, lambda } => {
            if !(d > 0.0 && lambda > 0.0) {
                return input("laplace_l1 needs d > 0 and lambda > 0");
            }
            if !(epsilon > 0.0) {
                return input(format!("laplace_l1 needs epsilon > 0, got {epsilon}"));
            }
            Ok((d * (d / (lambda * epsilon)).ln()).max(0.0))
        }
    }
}

/// Least-squares slope of rate against `log(1/epsilon)`.
pub fn rd_dimension_estimate<F>(rd_fn: F, eps_grid: &[f64]) -> Result<DimensionEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    if eps_grid.len() < 3 {
        return input("dimension estimate needs at least 3 grid points");
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return input("eps grid must be positive and strictly decreasing");
    }
    let rates = eps_grid.iter().map(|&e| rd_fn(e)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = eps_grid.iter().map(|e| -e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = rates.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&rates).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&rates)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(DimensionEstimate {
        slope: slope.max(0.0),
        intercept,
        eps_grid: eps_grid.to_vec(),
        rates,
        fit_residual: (rss / n).sqrt(),
    })
}

/// `n` log-spaced points from `hi` down to `lo`.
pub fn log_grid_desc(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// `c* - gen(s, what)`, with `c*` the smallest gen over the support of `q`.
pub fn rd_star_distortion(q: &JointTable, gen_table: &DistortionMatrix) -> Result<(DistortionMatrix, f64)> {
    if q.rows() != gen_table.rows() || q.row_labels() != gen_table.row_labels() {
        return input("joint and gen table must share the dataset alphabet");
    }
    let col_index = q
        .col_labels()
        .iter()
        .map(|l| {
            gen_table
                .col_labels()
                .iter()
                .position(|g| g == l)
                .ok_or_else(|| RdError::Input(format!("hypothesis {l:?} missing from gen table columns")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cstar = f64::INFINITY;
    for (s, row) in q.cells().iter().enumerate() {
        for (w, v) in row.iter().enumerate() {
            if *v > ZERO_WEIGHT {
                cstar = cstar.min(gen_table.get(s, col_index[w]));
            }
        }
    }
    let cells = gen_table
        .cells()
        .iter()
        .map(|r| r.iter().map(|g| cstar - g).collect())
        .collect();
    let d = DistortionMatrix::new(gen_table.row_labels.clone(), gen_table.col_labels.clone(), cells)?;
    Ok((d, cstar))
}

/// Constrained rate with distortion `c* - gen(s, what)` and source `Q_S`.
pub fn rd_star(q: &JointTable, gen_table: &DistortionMatrix, epsilon: f64, opts: &BaOptions) -> Result<RdPoint> {
    let (d, _) = rd_star_distortion(q, gen_table)?;
    rd_at_distortion(&q.row_marginal(), &d, Constraint::Upper { epsilon }, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MartonMethod {
    Grid { step: f64 },
    MirrorAscent { iterations: usize, step: f64 },
}

impl Default for MartonMethod {
    fn default() -> Self {
        MartonMethod::Grid { step: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartonResult {
    pub rate: f64,
    pub argmax: JointTable,
    pub kl_to_p: f64,
    pub radius: f64,
    pub method: MartonMethod,
    /// `true` for the exhaustive grid (exact over the grid), `false` for a
    /// lower bound from ascent.
    pub exact_grid: bool,
    pub evaluated: usize,
}

/// Grid points beyond this count are refused.
pub const MARTON_GRID_LIMIT: f64 = 2e7;

fn binom(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Supremum of `rd_star(Q)` over `Q` with `D(Q || P) <= log(1/delta)`.
pub fn marton_sup(
    p: &JointTable,
    gen_table: &DistortionMatrix,
    epsilon: f64,
    delta: f64,
    method: MartonMethod,
    opts: &BaOptions,
) -> Result<MartonResult> {
    if !(delta > 0.0 && delta <= 1.0) {
        return input(format!(
            "delta must lie in (0, 1]; delta = {delta} gives an unbounded KL radius"
        ));
    }
    let radius = (1.0 / delta).ln();
    let flat = p.flat();
    let support: Vec<usize> = (0..flat.len()).filter(|&i| flat[i] > ZERO_WEIGHT).collect();
    let ps: Vec<f64> = support.iter().map(|&i| flat[i]).collect();
    let build = |qs: &[f64]| -> Result<JointTable> {
        let mut full = vec![0.0; flat.len()];
        for (&i, v) in support.iter().zip(qs) {
            full[i] = *v;
        }
        p.with_flat(&full)
    };
    let eval = |qs: &[f64]| -> Result<f64> { Ok(rd_star(&build(qs)?, gen_table, epsilon, opts)?.rate) };
    let base = eval(&ps)?;

    match method {
        MartonMethod::Grid { step } => {
            if flat.len() > 9 {
                return Err(RdError::Size {
                    what: "joint alphabet for grid",
                    size: flat.len() as f64,
                    limit: 9.0,
                });
            }
            if !(step > 0.0 && step <= 1.0) {
                return input(format!("grid step must lie in (0, 1], got {step}"));
            }
            let n = (1.0 / step).round() as usize;
            let k = support.len();
            let count = binom(n + k - 1, k - 1);
            if count > MARTON_GRID_LIMIT {
                return Err(RdError::Size {
                    what: "grid points",
                    size: count,
                    limit: MARTON_GRID_LIMIT,
                });
            }
            let rows = p.rows();
            let sw_rows: Vec<usize> = support.iter().map(|&i| i / p.cols()).collect();
            let ctx = GridCtx {
                n,
                k,
                ps: &ps,
                radius,
                rows,
                sw_rows: &sw_rows,
                eval: &eval,
            };
            let first: Vec<usize> = (0..=n).collect();
            let chunks = crate::par::try_map(&first, |&a0| ctx.scan_chunk(a0))?;
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut evaluated = 0;
            for (local, cnt) in chunks {
                evaluated += cnt;
                if let Some((v, comp)) = local {
                    best = match best {
                        None => Some((v, comp)),
                        Some((bv, bc)) => {
                            if v > bv || (v == bv && comp < bc) {
                                Some((v, comp))
                            } else {
                                Some((bv, bc))
                            }
                        }
                    };
                }
            }
            let (rate, qs) = match best {
                Some((v, comp)) if v > base => (v, comp.iter().map(|&c| c as f64 / n as f64).collect()),
                _ => (base, ps.clone()),
            };
            let argmax = build(&qs)?;
            Ok(MartonResult {
                rate,
                kl_to_p: kl_of(&qs, &ps),
                argmax,
                radius,
                method,
                exact_grid: true,
                evaluated: evaluated + 1,
            })
        }
        MartonMethod::MirrorAscent { iterations, step } => {
            let k = support.len();
            let mut theta: Vec<f64> = ps.iter().map(|v| v.ln()).collect();
            let to_q = |th: &[f64]| -> Vec<f64> {
                let m = th.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = th.iter().map(|t| (t - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            };
            let mut best_q = ps.clone();
            let mut best = base;
            let mut evaluated = 1;
            let h = 1e-4;
            for _ in 0..iterations {
                let cur = to_q(&theta);
                let f0 = eval(&cur)?;
                let mut grad = vec![0.0; k];
                for i in 0..k {
                    let mut th = theta.clone();
                    th[i] += h;
                    grad[i] = (eval(&to_q(&th))? - f0) / h;
                    evaluated += 1;
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    break;
                }
                let mut eta = step / norm;
                let mut moved = false;
                for _ in 0..40 {
                    let th: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + eta * g).collect();
                    let qn = to_q(&th);
                    if kl_of(&qn, &ps) <= radius {
                        let v = eval(&qn)?;
                        evaluated += 1;
                        if v >= f0 {
                            theta = th;
                            if v > best {
                                best = v;
                                best_q = qn;
                            }
                            moved = true;
                            break;
                        }
                    }
                    eta *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            Ok(MartonResult {
                rate: best,
                kl_to_p: kl_of(&best_q, &ps),
                argmax: build(&best_q)?,
                radius,
                method,
                exact_grid: false,
                evaluated,
            })
        }
    }
}

struct GridCtx<'a, E> {
    n: usize,
    k: usize,
    ps: &'a [f64],
    radius: f64,
    rows: usize,
    sw_rows: &'a [usize],
    eval: &'a E,
}

/// Best (value, composition) of a chunk and its evaluation count.
type ChunkScan = (Option<(f64, Vec<usize>)>, usize);

impl<'a, E> GridCtx<'a, E>
where
    E: Fn(&[f64]) -> Result<f64> + Sync,
{
    /// Scan all compositions with first part `a0`; returns the local best
    /// (value, composition) and the number of rd_star evaluations.
    fn scan_chunk(&self, a0: usize) -> Result<ChunkScan> {
        let mut comp = vec![0usize; self.k];
        comp[0] = a0;
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut count = 0;
        if self.k == 1 {
            if a0 == self.n {
                self.visit(&comp, &mut best, &mut count)?;
            }
            return Ok((best, count));
        }
        self.rec(1, self.n - a0, &mut comp, &mut best, &mut count)?;
        Ok((best, count))
    }

    fn rec(
        &self,
        pos: usize,
        left: usize,
        comp: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
        count: &mut usize,
    ) -> Result<()> {
        if pos == self.k - 1 {
            comp[pos] = left;
            return self.visit(comp, best, count);
        }
        for a in 0..=left {
            comp[pos] = a;
            self.rec(pos + 1, left - a, comp, best, count)?;
        }
        Ok(())
    }

    fn visit(&self, comp: &[usize], best: &mut Option<(f64, Vec<usize>)>, count: &mut usize) -> Result<()> {
        let nf = self.n as f64;
        let qs: Vec<f64> = comp.iter().map(|&c| c as f64 / nf).collect();
        if kl_of(&qs, self.ps) > self.radius + 1e-12 {
            return Ok(());
        }
        let mut qrow = vec![0.0; self.rows];
        for (r, v) in self.sw_rows.iter().zip(&qs) {
            qrow[*r] += v;
        }
        let ub = entropy_of(&qrow);
        if let Some((bv, _)) = best {
            if ub < *bv {
                return Ok(());
            }
        }
        let v = (self.eval)(&qs)?;
        *count += 1;
        let better = match best {
            None => true,
            Some((bv, _)) => v > *bv,
        };
        if better {
            *best = Some((v, comp.to_vec()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infocore::entropy;

    fn hb(p: f64) -> f64 {
        binary_entropy(p).unwrap()
    }

    fn upper(e: f64) -> Constraint {
        Constraint::Upper { epsilon: e }
    }

    #[test]
    fn zero_slope_picks_best_column() {
        let src = ProbVec::from_weights(vec![0.7, 0.3]).unwrap();
        let d = DistortionMatrix::hamming(2);
        let pt = ba_fixed_slope(&src, &d, 0.0, &BaOptions::default()).unwrap();
        assert_eq!(pt.rate, 0.0);
        assert_eq!(pt.channel.rows()[0], vec![1.0, 0.0]);
        assert_eq!(pt.channel.rows()[1], vec![1.0, 0.0]);
    }

    #[test]
    fn large_slope_is_lossless() {
        let src = ProbVec::uniform(2).unwrap();
        let pt = ba_fixed_slope(&src, &DistortionMatrix::hamming(2), 40.0, &BaOptions::default()).unwrap();
        assert!((pt.rate - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(pt.distortion < 1e-15);
    }

    #[test]
    fn bernoulli_hamming_matches_closed_form() {
        let src = ProbVec::bernoulli(0.5).unwrap();
        let pt = rd_at_distortion(&src, &DistortionMatrix::hamming(2), upper(0.11), &BaOptions::default()).unwrap();
        assert!((pt.rate - (std::f64::consts::LN_2 - hb(0.11))).abs() < 1e-9);
        let src = ProbVec::bernoulli(0.3).unwrap();
        let pt = rd_at_distortion(&src, &DistortionMatrix::hamming(2), upper(0.1), &BaOptions::default()).unwrap();
        // h_b(0.3) - h_b(0.1) = 0.285781329... (30-digit evaluation)
        assert!((pt.rate - 0.285781328_6).abs() < 1e-8, "{}", pt.rate);
        assert!(pt.distortion <= 0.1 + 1e-9);
    }

    #[test]
    fn rate_zero_above_best_column() {
        let src = ProbVec::bernoulli(0.3).unwrap();
        let pt = rd_at_distortion(&src, &DistortionMatrix::hamming(2), upper(0.3), &BaOptions::default()).unwrap();
        assert_eq!(pt.rate, 0.0);
    }

    #[test]
    fn infeasible_reports_range() {
        let src = ProbVec::bernoulli(0.3).unwrap();
        let d = DistortionMatrix::hamming(2).shifted(1.0);
        match rd_at_distortion(&src, &d, upper(0.5), &BaOptions::default()) {
            Err(RdError::Infeasible { min, max, .. }) => {
                assert!((min - 1.0).abs() < 1e-15);
                assert!((max - 2.0).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_distortion_bijection_gives_entropy() {
        let src = ProbVec::from_weights(vec![0.2, 0.5, 0.3]).unwrap();
        let d = DistortionMatrix::from_cells(vec![
            vec![1.0, 0.0, 2.0],
            vec![0.0, 1.5, 1.0],
            vec![3.0, 1.0, 0.0],
        ])
        .unwrap();
        let pt = rd_at_distortion(&src, &d, upper(0.0), &BaOptions::default()).unwrap();
        assert!((pt.rate - entropy(&src)).abs() < 1e-6);
        assert!(pt.slope.is_none());
    }

    #[test]
    fn interval_constraint_both_sides() {
        let src = ProbVec::bernoulli(0.5).unwrap();
        let d = DistortionMatrix::hamming(2);
        let opts = BaOptions::default();
        let a = rd_at_distortion(&src, &d, Constraint::Interval { lo: 0.0, hi: 0.11 }, &opts).unwrap();
        let b = rd_at_distortion(&src, &d, upper(0.11), &opts).unwrap();
        assert!((a.rate - b.rate).abs() < 1e-12);
        // pushing distortion above every column mean needs rate as well
        let c = rd_at_distortion(&src, &d, Constraint::Interval { lo: 0.89, hi: 1.0 }, &opts).unwrap();
        assert!((c.rate - b.rate).abs() < 1e-8, "{} vs {}", c.rate, b.rate);
        assert!(c.distortion >= 0.89 - 1e-9);
        assert!(c.slope.unwrap() < 0.0);
        let z = rd_at_distortion(&src, &d, Constraint::Interval { lo: 0.2, hi: 0.6 }, &opts).unwrap();
        assert_eq!(z.rate, 0.0);
    }

    #[test]
    fn closed_forms() {
        let g = |d, e| closed_form_rd(Family::GaussianSq { d, sigma2: 1.0 }, e).unwrap();
        assert_eq!(g(1.0, 1.0), 0.0);
        assert!((g(2.0, 0.5) - 4f64.ln()).abs() < 1e-15);
        let b = closed_form_rd(Family::BernoulliHamming { d: 1.0 }, 0.11).unwrap();
        assert!((b - (std::f64::consts::LN_2 - hb(0.11))).abs() < 1e-15);
        assert_eq!(closed_form_rd(Family::BernoulliHamming { d: 1.0 }, 2.0).unwrap(), 0.0);
        assert!(closed_form_rd(Family::GaussianSq { d: 1.0, sigma2: 1.0 }, 0.0).is_err());
        let l = closed_form_rd(Family::LaplaceL1 { d: 2.0, lambda: 1.0 }, 0.5).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dimension_of_gaussian() {
        let grid = log_grid_desc(1e-2, 1e-6, 9);
        for (d, want) in [(1.0, 0.5), (3.0, 1.5)] {
            let est = rd_dimension_estimate(
                |e| closed_form_rd(Family::GaussianSq { d, sigma2: 1.0 }, e),
                &grid,
            )
            .unwrap();
            assert!((est.slope - want).abs() < 1e-9);
        }
        let flat = rd_dimension_estimate(|_| Ok(0.7), &grid).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(rd_dimension_estimate(|_| Ok(0.0), &grid[..2]).is_err());
    }

    #[test]
    fn rd_star_rate_zero_and_identity_bound() {
        // two datasets, two hypotheses; deterministic assignment s -> w
        let q = JointTable::from_cells(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let gen = DistortionMatrix::from_cells(vec![vec![0.3, -0.1], vec![-0.4, -0.2]]).unwrap();
        let opts = BaOptions::default();
        let pt = rd_star(&q, &gen, 0.0, &opts).unwrap();
        assert!(pt.rate <= crate::infocore::mutual_information(&q) + 1e-9);
        let big = rd_star(&q, &gen, 10.0, &opts).unwrap();
        assert_eq!(big.rate, 0.0);
    }

    #[test]
    fn marton_radius_zero_is_rd_star() {
        let p = JointTable::from_cells(vec![vec![0.4, 0.1], vec![0.15, 0.35]]).unwrap();
        let gen = DistortionMatrix::from_cells(vec![vec![0.3, -0.2], vec![-0.1, 0.25]]).unwrap();
        let opts = BaOptions::default();
        let r = marton_sup(&p, &gen, 0.01, 1.0, MartonMethod::Grid { step: 0.05 }, &opts).unwrap();
        let direct = rd_star(&p, &gen, 0.01, &opts).unwrap();
        assert_eq!(r.rate, direct.rate);
        assert!(marton_sup(&p, &gen, 0.01, 0.0, MartonMethod::default(), &opts).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = DistortionMatrix::hamming(3);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<DistortionMatrix>(&s).unwrap(), d);
        let bad = r#"{"row_labels":["a"],"col_labels":["x","y"],"cells":[[0.0]]}"#;
        let err = serde_json::from_str::<DistortionMatrix>(bad).unwrap_err().to_string();
        assert!(err.contains("dimensions match alphabets"), "{err}");
    }
}
