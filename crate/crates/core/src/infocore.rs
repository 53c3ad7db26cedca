//! Exact information measures on finite labeled alphabets.
//!
//! All quantities are in nats. Containers validate their invariants on
//! construction (and on deserialization), so downstream code can assume
//! normalized, nonnegative weights.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{input, RdError, Result};

/// Mass tolerance for normalization checks.
pub const MASS_TOL: f64 = 1e-12;
/// Weights below this are exact zeros inside logarithms.
pub const ZERO_WEIGHT: f64 = 1e-15;

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= ZERO_WEIGHT {
        0.0
    } else {
        x * x.ln()
    }
}

/// Entropy of a raw weight slice (assumed normalized).
pub fn entropy_of(weights: &[f64]) -> f64 {
    -weights.iter().map(|&w| xlogx(w)).sum::<f64>()
}

/// KL divergence between raw weight slices of equal length.
pub fn kl_of(q: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi <= ZERO_WEIGHT {
            continue;
        }
        if pi <= ZERO_WEIGHT {
            return f64::INFINITY;
        }
        acc += qi * (qi / pi).ln();
    }
    acc.max(0.0)
}

fn check_labels(labels: &[String], what: &'static str) -> Result<()> {
    if labels.is_empty() {
        return Err(RdError::Invariant {
            invariant: "length >= 1",
            detail: format!("{what} alphabet is empty"),
        });
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(RdError::Invariant {
                invariant: "labels unique",
                detail: format!("{what} label {l:?} repeated"),
            });
        }
    }
    Ok(())
}

fn check_weights(weights: &[f64], what: &str) -> Result<()> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(RdError::Invariant {
                invariant: "weights >= 0",
                detail: format!("{what} entry {i} is {w}"),
            });
        }
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(RdError::Invariant {
            invariant: "weights sum to 1",
            detail: format!("{what} sums to {total:.17}"),
        });
    }
    Ok(())
}

/// Build `n` labels `"0".."n-1"`.
pub fn index_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Probability vector over an ordered, labeled alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbVec")]
pub struct ProbVec {
    labels: Vec<String>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawProbVec {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl TryFrom<RawProbVec> for ProbVec {
    type Error = RdError;
    fn try_from(raw: RawProbVec) -> Result<Self> {
        ProbVec::new(raw.labels, raw.weights)
    }
}

impl ProbVec {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        check_labels(&labels, "probability vector")?;
        if labels.len() != weights.len() {
            return Err(RdError::Invariant {
                invariant: "labels and weights have equal length",
                detail: format!("{} labels, {} weights", labels.len(), weights.len()),
            });
        }
        check_weights(&weights, "probability vector")?;
        Ok(Self { labels, weights })
    }

    /// Index-labeled vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new(index_labels(weights.len()), weights)
    }

    /// Rescale nonnegative raw weights to unit mass.
    pub fn normalized(labels: Vec<String>, raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || raw.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return input("cannot normalize: weights must be nonnegative with positive mass");
        }
        Self::new(labels, raw.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return input("uniform distribution needs a nonempty alphabet");
        }
        Self::from_weights(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return input(format!("point mass index {at} outside alphabet of size {n}"));
        }
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        Self::from_weights(w)
    }

    /// Bernoulli(p) over labels `"0"`, `"1"`; weight of `"1"` is `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return input(format!("Bernoulli parameter {p} outside [0, 1]"));
        }
        Self::from_weights(vec![1.0 - p, p])
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn same_alphabet(&self, other: &ProbVec) -> bool {
        self.labels == other.labels
    }

    /// Reorder `self` to follow the label order of `reference`.
    pub fn aligned_to(&self, reference: &ProbVec) -> Result<ProbVec> {
        if self.len() != reference.len() {
            return input("alphabets differ in size");
        }
        let mut w = Vec::with_capacity(self.len());
        for l in reference.labels() {
            match self.index_of(l) {
                Some(i) => w.push(self.weights[i]),
                None => return input(format!("label {l:?} missing from distribution")),
            }
        }
        ProbVec::new(reference.labels.clone(), w)
    }

    /// Total-variation distance on a shared alphabet.
    pub fn total_variation(&self, other: &ProbVec) -> Result<f64> {
        if !self.same_alphabet(other) {
            return input("total variation needs identical alphabets");
        }
        Ok(0.5
            * self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    /// Indices with positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.weights[i] > ZERO_WEIGHT)
            .collect()
    }
}

/// Joint distribution table; rows and columns are labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint")]
pub struct JointTable {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cells: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawJoint {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    cells: Vec<Vec<f64>>,
}

impl TryFrom<RawJoint> for JointTable {
    type Error = RdError;
    fn try_from(raw: RawJoint) -> Result<Self> {
        JointTable::new(raw.row_labels, raw.col_labels, raw.cells)
    }
}

fn check_shape(rows: usize, cols: usize, cells: &[Vec<f64>], what: &str) -> Result<()> {
    if cells.len() != rows || cells.iter().any(|r| r.len() != cols) {
        return Err(RdError::Invariant {
            invariant: "dimensions match alphabets",
            detail: format!("{what} is not {rows}x{cols}"),
        });
    }
    Ok(())
}

impl JointTable {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, cells: Vec<Vec<f64>>) -> Result<Self> {
        check_labels(&row_labels, "row")?;
        check_labels(&col_labels, "column")?;
        check_shape(row_labels.len(), col_labels.len(), &cells, "joint table")?;
        let flat: Vec<f64> = cells.iter().flatten().copied().collect();
        check_weights(&flat, "joint table")?;
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

    /// Outer product of two marginals.
    pub fn product(rows: &ProbVec, cols: &ProbVec) -> Self {
        let cells = rows
            .weights()
            .iter()
            .map(|a| cols.weights().iter().map(|b| a * b).collect())
            .collect();
        Self {
            row_labels: rows.labels().to_vec(),
            col_labels: cols.labels().to_vec(),
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

    pub fn row_marginal(&self) -> ProbVec {
        let w: Vec<f64> = self.cells.iter().map(|r| r.iter().sum()).collect();
        ProbVec {
            labels: self.row_labels.clone(),
            weights: w,
        }
    }

    pub fn col_marginal(&self) -> ProbVec {
        let mut w = vec![0.0; self.cols()];
        for row in &self.cells {
            for (acc, v) in w.iter_mut().zip(row) {
                *acc += v;
            }
        }
        ProbVec {
            labels: self.col_labels.clone(),
            weights: w,
        }
    }

    /// Row-major flattening.
    pub fn flat(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }

    /// Rebuild a table with the same labels from row-major weights.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let c = self.cols();
        let cells = flat.chunks(c).map(|r| r.to_vec()).collect();
        Self::new(self.row_labels.clone(), self.col_labels.clone(), cells)
    }

    /// Conditional of the column variable given the row variable.
    /// Rows with zero mass get a uniform conditional.
    pub fn conditional_cols_given_rows(&self) -> Channel {
        let c = self.cols();
        let rows = self
            .cells
            .iter()
            .map(|r| {
                let m: f64 = r.iter().sum();
                if m > ZERO_WEIGHT {
                    r.iter().map(|v| v / m).collect()
                } else {
                    vec![1.0 / c as f64; c]
                }
            })
            .collect();
        Channel {
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
            rows,
        }
    }
}

/// Conditional kernel: each row is a distribution over the output alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannel")]
pub struct Channel {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawChannel {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawChannel> for Channel {
    type Error = RdError;
    fn try_from(raw: RawChannel) -> Result<Self> {
        Channel::new(raw.row_labels, raw.col_labels, raw.rows)
    }
}

impl Channel {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        check_labels(&row_labels, "input")?;
        check_labels(&col_labels, "output")?;
        check_shape(row_labels.len(), col_labels.len(), &rows, "channel")?;
        for (i, r) in rows.iter().enumerate() {
            check_weights(r, &format!("channel row {i}"))?;
        }
        Ok(Self {
            row_labels,
            col_labels,
            rows,
        })
    }

    /// Unchecked constructor for solver output; rows are renormalized.
    pub(crate) fn from_rows_normalizing(row_labels: Vec<String>, col_labels: Vec<String>, mut rows: Vec<Vec<f64>>) -> Self {
        for r in rows.iter_mut() {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter_mut().for_each(|v| *v /= s);
            }
        }
        Self {
            row_labels,
            col_labels,
            rows,
        }
    }

    /// Channel whose every row equals `dist`.
    pub fn constant(row_labels: Vec<String>, dist: &ProbVec) -> Self {
        let rows = vec![dist.weights().to_vec(); row_labels.len()];
        Self {
            row_labels,
            col_labels: dist.labels().to_vec(),
            rows,
        }
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r][c]
    }

    /// Joint of `source` (over the inputs) and this channel.
    pub fn joint(&self, source: &ProbVec) -> Result<JointTable> {
        if source.len() != self.rows.len() {
            return input("source and channel input alphabets differ in size");
        }
        let cells = source
            .weights()
            .iter()
            .zip(&self.rows)
            .map(|(p, r)| r.iter().map(|c| p * c).collect())
            .collect();
        Ok(JointTable {
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
            cells,
        })
    }

    /// Output marginal under `source`.
    pub fn output_marginal(&self, source: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.col_labels.len()];
        for (p, r) in source.iter().zip(&self.rows) {
            for (acc, c) in q.iter_mut().zip(r) {
                *acc += p * c;
            }
        }
        q
    }
}

/// `(1+u) ln(1+u) - u`, accurate for small `|u|`.
fn one_plus_log_excess(u: f64, v: f64) -> f64 {
    if u.abs() < 1e-3 {
        let mut term = u * u;
        let mut acc = 0.0;
        for k in 2..10 {
            let kf = k as f64;
            acc += term / (kf * (kf - 1.0));
            term *= -u;
        }
        acc
    } else if v <= 0.0 {
        1.0
    } else {
        // v = 1 + u computed directly: near u = -1 the sum rounds to -1
        v * v.ln() - v + 1.0
    }
}

/// Mutual information between source and output of a channel given as rows.
///
/// Written as `sum_x p(x) sum_y q(y) phi(W(y|x)/q(y) - 1)` with every term
/// nonnegative and `q` carried in double-double, so nearly independent
/// channels keep their relative accuracy instead of drowning in cancellation.
pub fn channel_mutual_information(source: &[f64], rows: &[Vec<f64>]) -> f64 {
    let k = rows.first().map_or(0, |r| r.len());
    let mut hi = vec![0.0f64; k];
    let mut lo = vec![0.0f64; k];
    for (p, r) in source.iter().zip(rows) {
        for y in 0..k {
            // exact product and compensated sum
            let prod = p * r[y];
            let perr = p.mul_add(r[y], -prod);
            let s = hi[y] + prod;
            let bb = s - hi[y];
            let serr = (hi[y] - (s - bb)) + (prod - bb);
            hi[y] = s;
            lo[y] += serr + perr;
        }
    }
    for y in 0..k {
        let s = hi[y] + lo[y];
        lo[y] -= s - hi[y];
        hi[y] = s;
    }
    let mut acc = 0.0;
    for (p, r) in source.iter().zip(rows) {
        if *p <= ZERO_WEIGHT {
            continue;
        }
        let mut row = 0.0;
        for y in 0..k {
            if hi[y] <= 0.0 {
                continue;
            }
            let u = ((r[y] - hi[y]) - lo[y]) / hi[y];
            let v = (r[y] - lo[y]) / hi[y];
            row += hi[y] * one_plus_log_excess(u, v);
        }
        acc += p * row;
    }
    acc.max(0.0)
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVec) -> f64 {
    entropy_of(p.weights()).max(0.0)
}

/// Binary entropy `h_b(p)` in nats.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return input(format!("binary entropy argument {p} outside [0, 1]"));
    }
    Ok(-(xlogx(p) + xlogx(1.0 - p)))
}

/// `D(q || p)`; `+inf` when `q` is not absolutely continuous w.r.t. `p`.
pub fn kl_divergence(q: &ProbVec, p: &ProbVec) -> Result<f64> {
    if !q.same_alphabet(p) {
        return input("KL divergence needs identical alphabets (use ProbVec::aligned_to)");
    }
    Ok(kl_of(q.weights(), p.weights()))
}

/// `I(X;Y) = H(X) + H(Y) - H(X,Y)`.
pub fn mutual_information(j: &JointTable) -> f64 {
    let hx = entropy_of(j.row_marginal().weights());
    let hy = entropy_of(j.col_marginal().weights());
    let hxy = entropy_of(&j.flat());
    (hx + hy - hxy).max(0.0)
}

/// Empirical distribution (type) of `sequence` over `alphabet`.
pub fn empirical_type<S: AsRef<str>>(sequence: &[S], alphabet: &[String]) -> Result<ProbVec> {
    if sequence.is_empty() {
        return input("empirical type of an empty sequence");
    }
    let index: HashMap<&str, usize> = alphabet
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![0usize; alphabet.len()];
    for s in sequence {
        match index.get(s.as_ref()) {
            Some(&i) => counts[i] += 1,
            None => return input(format!("symbol {:?} not in alphabet", s.as_ref())),
        }
    }
    let m = sequence.len() as f64;
    ProbVec::new(
        alphabet.to_vec(),
        counts.iter().map(|&c| c as f64 / m).collect(),
    )
}

/// Type of an index sequence over `0..k`.
pub fn empirical_type_indices(sequence: &[usize], k: usize) -> Result<ProbVec> {
    if sequence.is_empty() {
        return input("empirical type of an empty sequence");
    }
    let mut counts = vec![0usize; k];
    for &s in sequence {
        if s >= k {
            return input(format!("symbol index {s} outside alphabet of size {k}"));
        }
        counts[s] += 1;
    }
    let m = sequence.len() as f64;
    ProbVec::from_weights(counts.iter().map(|&c| c as f64 / m).collect())
}

/// Finite distribution on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDist {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl RealDist {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return input("real distribution needs matching, nonempty values and probabilities");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return input("support values must be finite");
        }
        check_weights(&probs, "real distribution")?;
        Ok(Self { values, probs })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// `P(X >= t)`.
    pub fn upper_tail(&self, t: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, _)| **v >= t)
            .map(|(_, p)| p)
            .sum()
    }

    /// Smallest support point carrying positive mass.
    pub fn support_min(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > ZERO_WEIGHT)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn entropy_examples() {
        close(entropy(&ProbVec::uniform(2).unwrap()), std::f64::consts::LN_2, 1e-15);
        close(entropy(&ProbVec::point_mass(3, 1).unwrap()), 0.0, 0.0);
        // -(0.25 ln 0.25 + 0.75 ln 0.75), evaluated with mpmath at 30 digits
        close(
            entropy(&ProbVec::from_weights(vec![0.25, 0.75]).unwrap()),
            0.562335144618808,
            1e-12,
        );
    }

    #[test]
    fn binary_entropy_examples() {
        close(binary_entropy(0.5).unwrap(), std::f64::consts::LN_2, 1e-15);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        close(binary_entropy(0.11).unwrap(), 0.346515336918666, 1e-12);
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn kl_examples() {
        let half = ProbVec::uniform(2).unwrap();
        close(kl_divergence(&half, &half).unwrap(), 0.0, 0.0);
        let pm = ProbVec::from_weights(vec![1.0, 0.0]).unwrap();
        close(kl_divergence(&pm, &half).unwrap(), std::f64::consts::LN_2, 1e-15);
        let q = ProbVec::from_weights(vec![0.9, 0.1]).unwrap();
        close(kl_divergence(&q, &half).unwrap(), 0.368064207168497, 1e-12);
        assert_eq!(kl_divergence(&half, &pm).unwrap(), f64::INFINITY);
        let other = ProbVec::new(vec!["a".into(), "b".into()], vec![0.5, 0.5]).unwrap();
        assert!(kl_divergence(&other, &half).is_err());
    }

    #[test]
    fn mi_examples() {
        let p = ProbVec::from_weights(vec![0.3, 0.7]).unwrap();
        let q = ProbVec::from_weights(vec![0.6, 0.4]).unwrap();
        close(mutual_information(&JointTable::product(&p, &q)), 0.0, 1e-12);
        let id = JointTable::from_cells(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        close(mutual_information(&id), std::f64::consts::LN_2, 1e-15);
        let j = JointTable::from_cells(vec![vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        close(mutual_information(&j), 0.192744757021757, 1e-12);
    }

    #[test]
    fn empirical_type_examples() {
        let ab = vec!["a".to_string(), "b".to_string()];
        let t = empirical_type(&["a", "a", "b", "a"], &ab).unwrap();
        assert_eq!(t.weights(), &[0.75, 0.25]);
        let t = empirical_type(&["a"], &ab).unwrap();
        assert_eq!(t.weights(), &[1.0, 0.0]);
        let abc = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let t = empirical_type(&["a", "b", "b", "c", "c", "c"], &abc).unwrap();
        assert_eq!(t.weights(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
        assert!(empirical_type(&["z"], &ab).is_err());
    }

    #[test]
    fn rejects_bad_containers() {
        assert!(ProbVec::from_weights(vec![0.5, 0.6]).is_err());
        assert!(ProbVec::from_weights(vec![1.5, -0.5]).is_err());
        assert!(ProbVec::from_weights(vec![]).is_err());
        assert!(ProbVec::new(vec!["a".into(), "a".into()], vec![0.5, 0.5]).is_err());
        assert!(JointTable::from_cells(vec![vec![0.5, 0.5], vec![0.1]]).is_err());
        assert!(Channel::new(index_labels(1), index_labels(2), vec![vec![0.3, 0.3]]).is_err());
    }

    #[test]
    fn json_rejection_names_invariant() {
        let err = serde_json::from_str::<ProbVec>(r#"{"labels":["a","b"],"weights":[0.5,0.6]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("weights sum to 1"), "{err}");
        let err = serde_json::from_str::<ProbVec>(r#"{"labels":["a","a"],"weights":[0.5,0.5]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("labels unique"), "{err}");
        let ok: JointTable =
            serde_json::from_str(r#"{"row_labels":["0","1"],"col_labels":["x"],"cells":[[0.25],[0.75]]}"#)
                .unwrap();
        assert_eq!(ok.rows(), 2);
    }

    #[test]
    fn alignment_reorders_by_label() {
        let p = ProbVec::new(vec!["a".into(), "b".into()], vec![0.2, 0.8]).unwrap();
        let q = ProbVec::new(vec!["b".into(), "a".into()], vec![0.8, 0.2]).unwrap();
        assert_eq!(q.aligned_to(&p).unwrap(), p);
    }
}
