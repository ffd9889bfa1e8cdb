//! Block-wise linear regression `0.5 ||y - sum_i X_i theta_i||^2` with
//! per-block curvature certificates `L_i = ||X_i||^2`, `mu_i = sigma_min(X_i)^2`,
//! gradient-descent trajectories, and checks of the block NI bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::importance::IndexSet;
use crate::linalg::singular_values;
use crate::rng;

/// Relative slack for bound checks, in units of the initial loss.
pub const BOUND_SLACK: f64 = 1e-9;
/// Slack for the converse bounds, which are attained with equality when
/// `n = 1` and are evaluated at a `1e-12` loss proxy for the limit.
pub const LIMIT_SLACK: f64 = 1e-6;
pub const CONVERGED_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PplsBlocks {
    pub designs: Vec<DMatrix<f64>>,
    pub block_sets: Vec<IndexSet>,
    pub l_per_block: Vec<f64>,
    pub mu_per_block: Vec<f64>,
    pub l_total: f64,
    pub mu_total: f64,
    /// `sigma_min^2` of the stacked design; diagnostic only.
    pub mu_stacked: f64,
}

impl PplsBlocks {
    /// Wraps given designs, computing the certificates by SVD.
    pub fn from_designs(designs: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = designs.first().map(|x| x.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::OutOfRange("need at least one block with n >= 1".into()));
        }
        let p: usize = designs.iter().map(|x| x.ncols()).sum();
        let mut block_sets = Vec::with_capacity(designs.len());
        let (mut l, mut mu) = (Vec::new(), Vec::new());
        let mut start = 0;
        for x in &designs {
            if x.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: x.nrows(),
                });
            }
            if x.ncols() < n {
                return Err(Error::OutOfRange(format!(
                    "block width {} below sample count {n}",
                    x.ncols()
                )));
            }
            let sv = singular_values(x);
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            // the n-th singular value; p_i >= n keeps it meaningful
            let mut sorted = sv.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let smin = sorted[n - 1];
            l.push(smax * smax);
            mu.push(smin * smin);
            block_sets.push(IndexSet::range(start, start + x.ncols(), p)?);
            start += x.ncols();
        }
        let stacked = hstack(&designs);
        let mut sv = singular_values(&stacked);
        sv.sort_by(|a, b| b.total_cmp(a));
        let mu_stacked = sv[n - 1] * sv[n - 1];
        Ok(Self {
            l_total: l.iter().sum(),
            mu_total: mu.iter().sum(),
            designs,
            block_sets,
            l_per_block: l,
            mu_per_block: mu,
            mu_stacked,
        })
    }

    pub fn n(&self) -> usize {
        self.designs[0].nrows()
    }

    pub fn p(&self) -> usize {
        self.designs.iter().map(|x| x.ncols()).sum()
    }

    pub fn blocks(&self) -> usize {
        self.designs.len()
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        hstack(&self.designs)
    }

    /// `L_i / mu`.
    pub fn kappa(&self, i: usize) -> f64 {
        self.l_per_block[i] / self.mu_total
    }

    /// `mu_i / L`.
    pub fn kappa_tilde(&self, i: usize) -> f64 {
        self.mu_per_block[i] / self.l_total
    }
}

fn hstack(designs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = designs[0].nrows();
    let p = designs.iter().map(|x| x.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut c = 0;
    for x in designs {
        out.columns_mut(c, x.ncols()).copy_from(x);
        c += x.ncols();
    }
    out
}

/// Gaussian designs, block `i` drawn from stream `(seed, i)` and multiplied
/// by `column_scales[i]` when given.
pub fn build_blocks(
    n: usize,
    block_dims: &[usize],
    seed: u64,
    column_scales: Option<&[f64]>,
) -> Result<PplsBlocks> {
    if block_dims.is_empty() || n == 0 {
        return Err(Error::OutOfRange("need n >= 1 and at least one block".into()));
    }
    if let Some(s) = column_scales {
        if s.len() != block_dims.len() {
            return Err(Error::DimensionMismatch {
                expected: block_dims.len(),
                got: s.len(),
            });
        }
        if s.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::OutOfRange("block scales must be positive".into()));
        }
    }
    if let Some(&pi) = block_dims.iter().find(|&&pi| pi < n) {
        return Err(Error::OutOfRange(format!("block width {pi} below sample count {n}")));
    }
    let designs = block_dims
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let mut r = rng::stream(seed, i as u64);
            let c = column_scales.map_or(1.0, |s| s[i]);
            DMatrix::from_row_slice(n, pi, &rng::normal_vec(&mut r, n * pi, c))
        })
        .collect();
    PplsBlocks::from_designs(designs)
}

/// A block instance with a target and a starting point.
#[derive(Debug, Clone)]
pub struct PplsInstance {
    pub blocks: PplsBlocks,
    pub y: DVector<f64>,
    pub theta0: DVector<f64>,
}

/// Designs from `(seed, i)`, `y` and `theta0` standard normal from the
/// streams after the blocks.
pub fn random_instance(
    n: usize,
    block_dims: &[usize],
    seed: u64,
    column_scales: Option<&[f64]>,
) -> Result<PplsInstance> {
    let blocks = build_blocks(n, block_dims, seed, column_scales)?;
    let d = block_dims.len() as u64;
    let y = DVector::from_vec(rng::normal_vec(&mut rng::stream(seed, d), n, 1.0));
    let theta0 = DVector::from_vec(rng::normal_vec(&mut rng::stream(seed, d + 1), blocks.p(), 1.0));
    Ok(PplsInstance { blocks, y, theta0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub loss: f64,
    pub grad_sq: f64,
    /// `||grad_i||^2` per block.
    pub block_grad_sq: Vec<f64>,
    /// `||theta_i - theta_i0||^2` per block.
    pub dist_sq: Vec<f64>,
    /// Loss increase from resetting block `i` to its initial value.
    pub ni: Vec<f64>,
    /// Loss increase from resetting every block except `i`.
    pub ni_complement: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub eta: f64,
    pub initial_loss: f64,
    pub records: Vec<IterRecord>,
    pub final_theta: DVector<f64>,
    pub converged: bool,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("trajectory holds the initial point")
    }
}

fn record(blocks: &PplsBlocks, y: &DVector<f64>, theta: &DVector<f64>, theta0: &DVector<f64>) -> IterRecord {
    let d = blocks.blocks();
    let mut fit = DVector::zeros(y.len());
    let mut moves = Vec::with_capacity(d);
    let mut dist_sq = Vec::with_capacity(d);
    for (x, set) in blocks.designs.iter().zip(&blocks.block_sets) {
        let (s, len) = (set.indices()[0], set.len());
        let ti = theta.rows(s, len);
        fit += x * ti;
        let delta = ti - theta0.rows(s, len);
        dist_sq.push(delta.norm_squared());
        moves.push(x * delta);
    }
    let r = y - fit;
    let loss = 0.5 * r.norm_squared();
    let total_move: DVector<f64> = moves.iter().fold(DVector::zeros(y.len()), |a, m| a + m);
    let mut block_grad_sq = Vec::with_capacity(d);
    let mut ni = Vec::with_capacity(d);
    let mut ni_complement = Vec::with_capacity(d);
    for (x, u) in blocks.designs.iter().zip(&moves) {
        block_grad_sq.push((x.transpose() * &r).norm_squared());
        ni.push(0.5 * (&r + u).norm_squared() - loss);
        ni_complement.push(0.5 * (&r + (&total_move - u)).norm_squared() - loss);
    }
    IterRecord {
        loss,
        grad_sq: block_grad_sq.iter().sum(),
        block_grad_sq,
        dist_sq,
        ni,
        ni_complement,
    }
}

/// Gradient descent from `theta0`, recording every iterate until the loss
/// drops below `1e-12 L(theta0)` or `max_iters` steps. `eta` defaults to
/// `1/L`; larger steps are rejected.
pub fn run_gd(
    blocks: &PplsBlocks,
    y: &DVector<f64>,
    theta0: &DVector<f64>,
    eta: Option<f64>,
    max_iters: usize,
) -> Result<TrajectoryRecord> {
    if y.len() != blocks.n() {
        return Err(Error::DimensionMismatch {
            expected: blocks.n(),
            got: y.len(),
        });
    }
    if theta0.len() != blocks.p() {
        return Err(Error::DimensionMismatch {
            expected: blocks.p(),
            got: theta0.len(),
        });
    }
    let eta = eta.unwrap_or(1.0 / blocks.l_total);
    if !(eta > 0.0) || eta > 1.0 / blocks.l_total {
        return Err(Error::Contract(format!(
            "step {eta} outside (0, 1/L] with L = {}",
            blocks.l_total
        )));
    }
    let x = blocks.stacked();
    let mut theta = theta0.clone();
    let first = record(blocks, y, &theta, theta0);
    let l0 = first.loss;
    // rounding floor for targets that are already fit
    let target = (CONVERGED_RATIO * l0).max(1e-30 * y.norm_squared());
    let mut records = vec![first];
    let mut iters = 0;
    while records.last().unwrap().loss > target && iters < max_iters {
        let r = y - &x * &theta;
        theta += x.transpose() * r * eta;
        iters += 1;
        let rec = record(blocks, y, &theta, theta0);
        let prev = records.last().unwrap().loss;
        if rec.loss > prev + 1e-12 * l0 {
            return Err(Error::Contract(format!(
                "loss increased at step {iters}: {prev:e} -> {:e}",
                rec.loss
            )));
        }
        records.push(rec);
    }
    let converged = records.last().unwrap().loss <= target;
    Ok(TrajectoryRecord {
        eta,
        initial_loss: l0,
        records,
        final_theta: theta,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    LossDecay,
    Distance,
    NiUpper,
    ComplementLower,
    PlAggregate,
    PartialSmoothness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: BoundKind,
    pub block: usize,
    pub iter: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub checks: usize,
    pub violations: Vec<Violation>,
    /// Smallest `bound - value` seen per kind, normalized by `L(theta0)`.
    pub min_margin: Vec<(BoundKind, f64)>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Tally {
    checks: usize,
    violations: Vec<Violation>,
    margins: Vec<(BoundKind, f64)>,
}

impl Tally {
    fn new() -> Self {
        Self {
            checks: 0,
            violations: Vec::new(),
            margins: Vec::new(),
        }
    }

    /// Records `value <= bound` (both already normalized).
    fn upper(&mut self, kind: BoundKind, block: usize, iter: usize, value: f64, bound: f64, slack: f64) {
        self.checks += 1;
        let margin = bound - value;
        match self.margins.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, m)) => *m = m.min(margin),
            None => self.margins.push((kind, margin)),
        }
        if value > bound + slack * (1.0 + bound.abs()) {
            self.violations.push(Violation {
                kind,
                block,
                iter,
                value,
                bound,
            });
        }
    }

    fn report(self) -> BoundReport {
        BoundReport {
            checks: self.checks,
            violations: self.violations,
            min_margin: self.margins,
        }
    }
}

/// Checks at every recorded iterate, with `kappa = L_i / mu`:
/// `dist_i <= 8 kappa L0 / mu`,
/// `NI_i / L0 <= 8 kappa^2 + 4 kappa rho^(tau/2)`,
/// `NI_complement_i / L0 >= 1 - 8 kappa^2 - 4 kappa - rho^tau`,
/// plus loss decay `L_tau <= rho^tau L0`, the aggregated PL inequality and
/// per-block smoothness, where `rho = 1 - eta mu`.
pub fn check_theorem_bounds(traj: &TrajectoryRecord, blocks: &PplsBlocks) -> BoundReport {
    let mut t = Tally::new();
    let l0 = traj.initial_loss;
    let mu = blocks.mu_total;
    let rho = 1.0 - traj.eta * mu;
    if l0 == 0.0 {
        return t.report();
    }
    for (tau, rec) in traj.records.iter().enumerate() {
        let decay = rho.powi(tau as i32);
        t.upper(BoundKind::LossDecay, 0, tau, rec.loss / l0, decay, BOUND_SLACK);
        // ||grad||^2 >= 2 mu L, normalized by L0 * mu
        t.upper(
            BoundKind::PlAggregate,
            0,
            tau,
            2.0 * rec.loss / l0,
            rec.grad_sq / (l0 * mu),
            BOUND_SLACK,
        );
        for i in 0..blocks.blocks() {
            let kappa = blocks.kappa(i);
            let li = blocks.l_per_block[i];
            t.upper(
                BoundKind::Distance,
                i,
                tau,
                rec.dist_sq[i] * mu / l0,
                8.0 * kappa,
                BOUND_SLACK,
            );
            t.upper(
                BoundKind::NiUpper,
                i,
                tau,
                rec.ni[i] / l0,
                8.0 * kappa * kappa + 4.0 * kappa * decay.sqrt(),
                BOUND_SLACK,
            );
            // lower bound as an upper bound on the negation
            t.upper(
                BoundKind::ComplementLower,
                i,
                tau,
                -rec.ni_complement[i] / l0,
                -(1.0 - 8.0 * kappa * kappa - 4.0 * kappa - decay),
                BOUND_SLACK,
            );
            t.upper(
                BoundKind::PartialSmoothness,
                i,
                tau,
                rec.block_grad_sq[i] / (li * l0),
                2.0 * rec.loss / l0,
                BOUND_SLACK,
            );
        }
    }
    t.report()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTightness {
    pub kappa_tilde: f64,
    /// `||theta_i,inf - theta_i,0||^2 / (2 kappa~ L0 / L)`, at least 1 when the bound holds.
    pub dist_ratio: f64,
    pub ni_normalized: f64,
    pub ni_complement_normalized: Option<f64>,
    pub dist_ok: bool,
    pub ni_ok: bool,
    /// `NI_complement / L0 <= 1 - kappa~^2 - 2 kappa~`.
    pub complement_stated_ok: Option<bool>,
    /// `NI_complement / L0 <= (1 - kappa~)^2`, which is exact for `n = 1`.
    pub complement_exact_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    pub blocks: Vec<BlockTightness>,
}

impl TightnessReport {
    /// The two general converses.
    pub fn general_ok(&self) -> bool {
        self.blocks.iter().all(|b| b.dist_ok && b.ni_ok)
    }

    pub fn complement_stated_ok(&self) -> Option<bool> {
        self.blocks.iter().map(|b| b.complement_stated_ok).collect::<Option<Vec<_>>>().map(|v| v.iter().all(|&x| x))
    }

    pub fn complement_exact_ok(&self) -> Option<bool> {
        self.blocks.iter().map(|b| b.complement_exact_ok).collect::<Option<Vec<_>>>().map(|v| v.iter().all(|&x| x))
    }
}

/// Runs GD from `theta0` to convergence and checks the converse bounds
/// with `kappa~ = mu_i / L`. `with_complement` adds the complement check,
/// which is only defined for a single sample.
pub fn check_tightness(
    blocks: &PplsBlocks,
    y: &DVector<f64>,
    theta0: &DVector<f64>,
    with_complement: bool,
) -> Result<TightnessReport> {
    if with_complement && blocks.n() != 1 {
        return Err(Error::Unsupported(format!(
            "complement converse needs n = 1, got n = {}",
            blocks.n()
        )));
    }
    let traj = run_gd(blocks, y, theta0, None, 1_000_000)?;
    if !traj.converged {
        return Err(Error::Contract("gradient descent did not converge".into()));
    }
    let l0 = traj.initial_loss;
    let last = traj.last();
    // rounding noise when theta0 already fits y
    let floor = 1e-28 * (1.0 + y.norm_squared());
    let out = (0..blocks.blocks())
        .map(|i| {
            let kt = blocks.kappa_tilde(i);
            let dist_bound = 2.0 * kt * l0 / blocks.l_total;
            let ni = if l0 > 0.0 { last.ni[i] / l0 } else { 0.0 };
            let dist_ok = last.dist_sq[i] >= dist_bound * (1.0 - LIMIT_SLACK) - floor;
            let ni_ok = last.ni[i] >= kt * kt * l0 * (1.0 - LIMIT_SLACK) - floor;
            let (c, stated, exact) = if with_complement {
                let c = if l0 > 0.0 { last.ni_complement[i] / l0 } else { 0.0 };
                let stated = 1.0 - kt * kt - 2.0 * kt;
                let exact = (1.0 - kt) * (1.0 - kt);
                (
                    Some(c),
                    Some(c <= stated + LIMIT_SLACK),
                    Some(c <= exact + LIMIT_SLACK),
                )
            } else {
                (None, None, None)
            };
            BlockTightness {
                kappa_tilde: kt,
                dist_ratio: if dist_bound > 0.0 { last.dist_sq[i] / dist_bound } else { f64::INFINITY },
                ni_normalized: ni,
                ni_complement_normalized: c,
                dist_ok,
                ni_ok,
                complement_stated_ok: stated,
                complement_exact_ok: exact,
            }
        })
        .collect();
    Ok(TightnessReport { blocks: out })
}
