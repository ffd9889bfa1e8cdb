//! Importance measures over index sets and score-based pruning.
//!
//! Three notions of how much a subset of weights matters:
//!
//! * natural importance: the exact loss increase when the subset is replaced
//!   by a reference vector (zero for regular pruning, the initialization for
//!   init-pruning);
//! * magnitude importance: `sum theta_i^2` over the subset;
//! * Hessian importance: `sum H_ii theta_i^2` over the subset.
//!
//! Magnitude and Hessian importance decompose over coordinates, so pruning
//! to `s` weights keeps the `s` best per-coordinate scores.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("weight {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Indices of nonzero entries.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Sorted set of distinct coordinates in `[0, dim)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
    dim: usize,
}

impl IndexSet {
    /// Builds a set from arbitrary-order indices. Duplicates are rejected.
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndexSet(format!("duplicate index {}", w[0])));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::InvalidIndexSet(format!(
                    "index {last} out of range for dimension {dim}"
                )));
            }
        }
        Ok(Self { indices, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            dim,
        }
    }

    pub fn range(start: usize, end: usize, dim: usize) -> Result<Self> {
        Self::new((start..end).collect(), dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> IndexSet {
        let mut out = Vec::with_capacity(self.dim - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..self.dim {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSet {
            indices: out,
            dim: self.dim,
        }
    }
}

/// A loss over flat parameter vectors.
pub trait LossOracle {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64]) -> Result<f64>;

    fn supports_hessian_diag(&self) -> bool {
        false
    }

    fn hessian_diag(&self, _theta: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported(
            "loss does not provide a Hessian diagonal".into(),
        ))
    }
}

/// Population squared loss `E[(y - x^T theta)^2]` for a diagonal feature
/// covariance and a realizable target `y = x^T minimizer + noise`:
/// `noise_var + sum_i cov_i (theta_i - minimizer_i)^2`.
///
/// The reported Hessian diagonal is `cov_i` (the exact Hessian is `2 cov`;
/// the constant is dropped so Hessian importance equals natural importance
/// at the minimizer).
#[derive(Debug, Clone)]
pub struct DiagonalPopulationLoss {
    pub cov_diag: Vec<f64>,
    pub minimizer: Vec<f64>,
    pub noise_var: f64,
}

impl DiagonalPopulationLoss {
    pub fn new(cov_diag: Vec<f64>, minimizer: Vec<f64>, noise_var: f64) -> Result<Self> {
        if cov_diag.len() != minimizer.len() {
            return Err(Error::DimensionMismatch {
                expected: cov_diag.len(),
                got: minimizer.len(),
            });
        }
        if cov_diag.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::OutOfRange("covariance diagonal must be positive".into()));
        }
        Ok(Self {
            cov_diag,
            minimizer,
            noise_var,
        })
    }
}

impl LossOracle for DiagonalPopulationLoss {
    fn dim(&self) -> usize {
        self.cov_diag.len()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let excess: f64 = theta
            .iter()
            .zip(&self.minimizer)
            .zip(&self.cov_diag)
            .map(|((t, m), c)| c * (t - m) * (t - m))
            .sum();
        Ok(self.noise_var + excess)
    }

    fn supports_hessian_diag(&self) -> bool {
        true
    }

    fn hessian_diag(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.cov_diag.clone())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `theta` with the coordinates in `delta` replaced by `reference`.
pub fn ablate(theta: &[f64], reference: &[f64], delta: &IndexSet) -> Vec<f64> {
    let mut out = theta.to_vec();
    for &i in delta.indices() {
        out[i] = reference[i];
    }
    out
}

/// Loss increase from replacing `theta` on `delta` by `reference`.
///
/// Not clamped: ablation can lower the loss, giving a negative value.
pub fn natural_importance<L: LossOracle + ?Sized>(
    loss: &L,
    theta: &WeightVector,
    reference: &WeightVector,
    delta: &IndexSet,
) -> Result<f64> {
    check_dim(theta.dim(), reference.dim())?;
    check_dim(theta.dim(), delta.dim())?;
    check_dim(loss.dim(), theta.dim())?;
    if delta.is_empty() {
        return Ok(0.0);
    }
    let ablated = ablate(theta.as_slice(), reference.as_slice(), delta);
    Ok(loss.evaluate(&ablated)? - loss.evaluate(theta.as_slice())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Magnitude,
    Hessian,
}

/// Per-coordinate importance; the importance of a set is the sum over it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub per_index: Vec<f64>,
    pub kind: ScoreKind,
    /// Set when a Hessian diagonal entry was negative.
    pub has_negative: bool,
}

impl ImportanceScores {
    pub fn total(&self, delta: &IndexSet) -> f64 {
        delta.indices().iter().map(|&i| self.per_index[i]).sum()
    }
}

pub fn magnitude_scores(theta: &WeightVector) -> ImportanceScores {
    ImportanceScores {
        per_index: theta.as_slice().iter().map(|t| t * t).collect(),
        kind: ScoreKind::Magnitude,
        has_negative: false,
    }
}

/// `H_ii(theta) * theta_i^2`. Requires a loss with a Hessian diagonal.
pub fn hessian_scores<L: LossOracle + ?Sized>(
    loss: &L,
    theta: &WeightVector,
) -> Result<ImportanceScores> {
    if !loss.supports_hessian_diag() {
        return Err(Error::Unsupported(
            "Hessian importance needs a loss with a Hessian diagonal".into(),
        ));
    }
    let diag = loss.hessian_diag(theta.as_slice())?;
    check_dim(theta.dim(), diag.len())?;
    Ok(hessian_scores_from_diag(&diag, theta.as_slice()))
}

pub fn hessian_scores_from_diag(diag: &[f64], theta: &[f64]) -> ImportanceScores {
    let has_negative = diag.iter().any(|h| *h < 0.0);
    if has_negative {
        log::warn!("Hessian diagonal has negative entries; scores may be negative");
    }
    ImportanceScores {
        per_index: diag.iter().zip(theta).map(|(h, t)| h * t * t).collect(),
        kind: ScoreKind::Hessian,
        has_negative,
    }
}

/// All indices ordered by decreasing score, ties by lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// The `s` highest-scoring indices, in ranking order.
pub fn top_indices(scores: &[f64], s: usize) -> Result<Vec<usize>> {
    if s > scores.len() {
        return Err(Error::OutOfRange(format!(
            "sparsity {s} exceeds dimension {}",
            scores.len()
        )));
    }
    let mut order = ranking(scores);
    order.truncate(s);
    Ok(order)
}

/// Keeps the `s` top-scoring coordinates of `theta` and zeroes the rest.
pub fn prune(scores: &ImportanceScores, theta: &WeightVector, s: usize) -> Result<WeightVector> {
    check_dim(theta.dim(), scores.per_index.len())?;
    let keep = top_indices(&scores.per_index, s)?;
    let mut out = vec![0.0; theta.dim()];
    for i in keep {
        out[i] = theta.as_slice()[i];
    }
    Ok(WeightVector(out))
}

/// Number of survivors a group of `size` keeps at `fraction`.
pub fn group_quota(fraction: f64, size: usize) -> usize {
    // 1e-9 absorbs products such as 0.07 * 100 = 7.000000000000001
    let q = (fraction * size as f64 - 1e-9).ceil().max(0.0) as usize;
    q.min(size)
}

/// Keeps `ceil(fraction * |group|)` top-scoring coordinates within each group.
pub fn prune_groupwise(
    scores: &ImportanceScores,
    theta: &WeightVector,
    groups: &[IndexSet],
    fraction: f64,
) -> Result<WeightVector> {
    check_dim(theta.dim(), scores.per_index.len())?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::OutOfRange(format!("fraction {fraction} not in [0,1]")));
    }
    check_partition(groups, theta.dim())?;
    let mut out = vec![0.0; theta.dim()];
    for g in groups {
        let local: Vec<f64> = g.indices().iter().map(|&i| scores.per_index[i]).collect();
        for j in top_indices(&local, group_quota(fraction, g.len()))? {
            let i = g.indices()[j];
            out[i] = theta.as_slice()[i];
        }
    }
    Ok(WeightVector(out))
}

pub fn check_partition(groups: &[IndexSet], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    for g in groups {
        if g.dim() != dim {
            return Err(Error::NotAPartition {
                dim,
                reason: format!("group declared over dimension {}", g.dim()),
            });
        }
        for &i in g.indices() {
            if seen[i] {
                return Err(Error::NotAPartition {
                    dim,
                    reason: format!("index {i} appears in two groups"),
                });
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::NotAPartition {
            dim,
            reason: format!("index {i} is not covered"),
        });
    }
    Ok(())
}
