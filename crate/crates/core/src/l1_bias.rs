//! l1 recovery under covariance aligned with the signal's sign pattern:
//! width bounds, a Monte-Carlo width estimate, a basis-pursuit solver, and
//! phase-transition curves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const BP_TOL: f64 = 1e-8;
pub const BP_MAX_ITERS: usize = 50_000;
pub const BP_RELAXATION: f64 = 1.8;
/// Sup-norm error below which a recovery counts as exact.
pub const RECOVERY_TOL: f64 = 1e-4;

fn check_sparsity(p: usize, s: usize, r: f64) -> Result<()> {
    if s == 0 || s > p {
        return Err(Error::OutOfRange(format!("need 1 <= s <= p, got s={s}, p={p}")));
    }
    if !(r >= 1.0) {
        return Err(Error::OutOfRange(format!("spike R must be >= 1, got {r}")));
    }
    Ok(())
}

/// Upper bound on the squared width of the l1 descent cone under a spike
/// of size `r` along the sign pattern.
pub fn width_bound_spike(p: usize, s: usize, r: f64) -> Result<f64> {
    check_sparsity(p, s, r)?;
    let (pf, sf) = (p as f64, s as f64);
    let r2 = r * r;
    let a = sf * (1.5 + 2.0 * (pf / sf).ln() / r2);
    let b = sf * (1.0 + 2.0 * pf.ln() / r2) + 1.0;
    Ok(a.min(b))
}

/// Sample size `(sqrt(d) + sqrt(kappa_tail s (3/2 + 2 ln(p/s)/R^2)) + t)^2`
/// for a covariance with a rank-`d_rank` part and a tail conditioned by
/// `kappa_tail`.
pub fn width_bound_general(
    p: usize,
    s: usize,
    r: f64,
    d_rank: usize,
    kappa_tail: f64,
    t: f64,
) -> Result<f64> {
    check_sparsity(p, s, r)?;
    if !(kappa_tail >= 1.0) || !(t >= 0.0) {
        return Err(Error::OutOfRange("need kappa_tail >= 1 and t >= 0".into()));
    }
    let (pf, sf) = (p as f64, s as f64);
    let core = kappa_tail * sf * (1.5 + 2.0 * (pf / sf).ln() / (r * r));
    let root = (d_rank as f64).sqrt() + core.sqrt() + t;
    Ok(root * root)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthEstimate {
    pub value: f64,
    pub std_err: f64,
    pub lambda: f64,
}

/// Monte-Carlo estimate of `min_lambda E dist(h, lambda * subdiff)^2` where
/// the subdifferential is `1/R` times the sign pattern on the support and
/// the unit box off it. `sqrt(2 ln(p/s))` and `sqrt(2 ln p)` are added to
/// the grid. All grid points share the same draws.
pub fn width_mc_estimate(
    p: usize,
    s: usize,
    r: f64,
    samples: usize,
    lambda_grid: &[f64],
    seed: u64,
) -> Result<WidthEstimate> {
    check_sparsity(p, s, r)?;
    if samples == 0 {
        return Err(Error::OutOfRange("need at least one sample".into()));
    }
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.push((2.0 * (p as f64 / s as f64).ln()).sqrt());
    grid.push((2.0 * (p as f64).ln()).sqrt());
    if grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::OutOfRange("lambda grid must be non-negative".into()));
    }
    let mut sums = vec![0.0; grid.len()];
    let mut sq = vec![0.0; grid.len()];
    let mut rg = rng::stream(seed, 0);
    let mut h = vec![0.0; p];
    for _ in 0..samples {
        for v in h.iter_mut() {
            *v = rng::normal(&mut rg);
        }
        for (k, &lam) in grid.iter().enumerate() {
            // the support carries the + pattern; h is symmetric so signs do not matter
            let on: f64 = h[..s].iter().map(|x| (x - lam / r).powi(2)).sum();
            let off: f64 = h[s..].iter().map(|x| (x.abs() - lam).max(0.0).powi(2)).sum();
            let d = on + off;
            sums[k] += d;
            sq[k] += d * d;
        }
    }
    let nf = samples as f64;
    let (k, value) = sums
        .iter()
        .map(|v| v / nf)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is nonempty");
    let var = if samples > 1 {
        ((sq[k] - nf * value * value) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(WidthEstimate {
        value,
        std_err: (var / nf).sqrt(),
        lambda: grid[k],
    })
}

/// `Sigma = ((R-1)/s) s s^T + F F^T + Sigma_tail` with `s` the sign pattern.
/// Without the optional parts `Sigma_tail = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedCovariance {
    pub sign_pattern: Vec<i8>,
    pub spike: f64,
    pub low_rank: Option<DMatrix<f64>>,
    /// Diagonal of the tail part, in `[1/kappa_tail, 1]`.
    pub tail_diag: Option<Vec<f64>>,
}

impl SpikedCovariance {
    pub fn new(sign_pattern: Vec<i8>, spike: f64) -> Result<Self> {
        if sign_pattern.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::OutOfRange("sign pattern entries must be -1, 0 or 1".into()));
        }
        let s = sign_pattern.iter().filter(|v| **v != 0).count();
        check_sparsity(sign_pattern.len(), s, spike)?;
        Ok(Self {
            sign_pattern,
            spike,
            low_rank: None,
            tail_diag: None,
        })
    }

    pub fn with_low_rank(mut self, factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: factor.nrows(),
            });
        }
        self.low_rank = Some(factor);
        Ok(self)
    }

    /// Tail diagonal drawn uniformly from `[1/kappa_tail, 1]`.
    pub fn with_tail(mut self, kappa_tail: f64, seed: u64) -> Result<Self> {
        if !(kappa_tail >= 1.0) {
            return Err(Error::OutOfRange("kappa_tail must be >= 1".into()));
        }
        let mut r = rng::stream(seed, 0);
        let lo = 1.0 / kappa_tail;
        self.tail_diag = Some((0..self.p()).map(|_| r.random_range(lo..=1.0)).collect());
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.sign_pattern.len()
    }

    pub fn sparsity(&self) -> usize {
        self.sign_pattern.iter().filter(|v| **v != 0).count()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        let s = self.sparsity() as f64;
        let sv = DVector::from_iterator(p, self.sign_pattern.iter().map(|&v| v as f64));
        let mut m = &sv * sv.transpose() * ((self.spike - 1.0) / s);
        match &self.tail_diag {
            Some(d) => {
                for i in 0..p {
                    m[(i, i)] += d[i];
                }
            }
            None => {
                for i in 0..p {
                    m[(i, i)] += 1.0;
                }
            }
        }
        if let Some(f) = &self.low_rank {
            m += f * f.transpose();
        }
        m
    }

    /// Symmetric square root by eigendecomposition.
    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.matrix());
        if eig.eigenvalues.iter().any(|e| *e <= 0.0) {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        let d = eig.eigenvalues.map(f64::sqrt);
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
    }
}

/// `s` nonzero signs at random positions.
pub fn random_sign_pattern(p: usize, s: usize, seed: u64) -> Result<Vec<i8>> {
    check_sparsity(p, s, 1.0)?;
    let mut r = rng::stream(seed, 0);
    let support = rand::seq::index::sample(&mut r, p, s);
    let mut out = vec![0i8; p];
    for i in support.iter() {
        out[i] = if r.random::<bool>() { 1 } else { -1 };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BpInstance {
    pub x: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub b: DVector<f64>,
}

/// Rows `z^T Sigma^{1/2}` with `z ~ N(0, I)`; `theta_star` follows the sign
/// pattern with magnitudes `1 + |N(0,1)|`.
pub fn sample_instance(cov: &SpikedCovariance, sqrt: &DMatrix<f64>, n: usize, seed: u64) -> BpInstance {
    let p = cov.p();
    let mut r = rng::stream(seed, 0);
    let z = DMatrix::from_row_slice(n, p, &rng::normal_vec(&mut r, n * p, 1.0));
    let x = z * sqrt;
    let theta_star = DVector::from_iterator(
        p,
        cov.sign_pattern
            .iter()
            .map(|&sg| if sg == 0 { 0.0 } else { sg as f64 * (1.0 + rng::normal(&mut r).abs()) }),
    );
    let b = &x * &theta_star;
    BpInstance { x, theta_star, b }
}

#[derive(Debug, Clone)]
pub struct BpResult {
    pub theta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `min ||theta||_1 s.t. X theta = b` by relaxed Douglas-Rachford splitting:
/// projection onto the affine set through a Cholesky factor of `X X^T`,
/// then soft thresholding. Non-convergence is reported through the flag.
pub fn basis_pursuit(x: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iters: usize) -> Result<BpResult> {
    let (n, p) = x.shape();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if n > p {
        return Err(Error::OutOfRange(format!("need n <= p, got n={n}, p={p}")));
    }
    let chol = (x * x.transpose())
        .cholesky()
        .ok_or_else(|| Error::Singular("design is not full row rank".into()))?;
    // P(z) = z - A (X z - b) with A = X^T (X X^T)^{-1}
    let a = x.transpose() * chol.inverse();
    let project = |z: &DVector<f64>| z - &a * (x * z - b);
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(BpResult {
            theta: DVector::zeros(p),
            converged: true,
            iterations: 0,
        });
    }
    // threshold on the scale of a typical coefficient
    let gamma = ((&a * b).norm() / (n as f64).sqrt()).max(1e-12);
    let mut z = DVector::zeros(p);
    let mut prev = project(&z);
    for it in 1..=max_iters {
        let theta = project(&z);
        let refl = &theta * 2.0 - &z;
        let w = refl.map(|v| soft(v, gamma));
        z += (&w - &theta) * BP_RELAXATION;
        let scale = theta.norm().max(1.0);
        let change = (&theta - &prev).norm();
        let gap = (&w - &theta).norm();
        prev = theta;
        if change <= tol * scale && gap <= tol * scale {
            let theta = project(&z);
            let feasible = (x * &theta - b).norm() <= tol * bnorm.max(1.0) * 10.0;
            return Ok(BpResult {
                theta,
                converged: feasible,
                iterations: it,
            });
        }
    }
    Ok(BpResult {
        theta: prev,
        converged: false,
        iterations: max_iters,
    })
}

pub fn recovered(res: &BpResult, theta_star: &DVector<f64>) -> bool {
    res.converged && (&res.theta - theta_star).amax() <= RECOVERY_TOL
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub n: usize,
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
}

/// Success rate of basis pursuit per `n` under `Sigma_R`. The sign pattern
/// is fixed per call from stream `(seed, 0)`; trial `t` at grid index `j`
/// uses `child_seed(child_seed(seed, j + 1), t)`.
pub fn phase_curve(
    p: usize,
    s: usize,
    r: f64,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<PhasePoint>> {
    if n_grid.is_empty() || trials == 0 {
        return Err(Error::OutOfRange("need a nonempty n grid and trials >= 1".into()));
    }
    let pattern = random_sign_pattern(p, s, seed)?;
    let cov = SpikedCovariance::new(pattern, r)?;
    let sqrt = cov.sqrt()?;
    n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let cell = rng::child_seed(seed, j as u64 + 1);
            let outcomes: Result<Vec<bool>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let inst = sample_instance(&cov, &sqrt, n, rng::child_seed(cell, t as u64));
                    match basis_pursuit(&inst.x, &inst.b, BP_TOL, BP_MAX_ITERS) {
                        Ok(res) => Ok(recovered(&res, &inst.theta_star)),
                        // a rank-deficient draw is a failed trial
                        Err(Error::Singular(_)) => Ok(false),
                        Err(e) => Err(e),
                    }
                })
                .collect();
            let successes = outcomes?.iter().filter(|b| **b).count();
            Ok(PhasePoint {
                n,
                successes,
                trials,
                rate: successes as f64 / trials as f64,
            })
        })
        .collect()
}

/// Smallest grid `n` whose success rate reaches `level`.
pub fn crossing(curve: &[PhasePoint], level: f64) -> Option<usize> {
    curve.iter().find(|pt| pt.rate >= level).map(|pt| pt.n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_bound_values() {
        let b = width_bound_spike(1000, 10, 1.0).unwrap();
        assert!((b - 10.0 * (1.5 + 2.0 * 100f64.ln())).abs() < 1e-12);
        assert!((b - 107.10).abs() < 0.01);
        assert!((width_bound_spike(1000, 10, 1e6).unwrap() - 11.0).abs() < 1e-6);
        let mut last = f64::INFINITY;
        for r in [1.0, 1.5, 2.0, 4.0, 8.0, 100.0] {
            let v = width_bound_spike(200, 5, r).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(width_bound_spike(10, 0, 1.0).is_err());
        assert!(width_bound_spike(10, 2, 0.5).is_err());
    }

    #[test]
    fn general_bound_structure() {
        let core = width_bound_general(1000, 10, 3.0, 0, 1.0, 0.0).unwrap();
        let direct = 10.0 * (1.5 + 2.0 * 100f64.ln() / 9.0);
        assert!((core - direct).abs() < 1e-12);
        let doubled = width_bound_general(1000, 10, 3.0, 0, 2.0, 0.0).unwrap();
        assert!((doubled / core - 2.0).abs() < 1e-12);
        // golden value from the formula
        let g = width_bound_general(1000, 10, 4.0, 5, 2.0, 1.0).unwrap();
        let expect = (5f64.sqrt() + (20.0 * (1.5 + 2.0 * 100f64.ln() / 16.0)).sqrt() + 1.0).powi(2);
        assert!((g - expect).abs() < 1e-12);
        assert!((g - 93.685_373_138_657_6).abs() < 1e-9, "{g}");
    }

    #[test]
    fn width_estimate_behaviour() {
        // no off-support and lambda = 0: the full Gaussian energy
        let full = width_mc_estimate(50, 50, 1.0, 4000, &[0.0], 1).unwrap();
        assert!((full.value - 50.0).abs() < 3.0 * full.std_err + 0.5, "{full:?}");
        let grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.1).collect();
        for r in [1.0, 2.0, 8.0] {
            let est = width_mc_estimate(200, 5, r, 2000, &grid, 3).unwrap();
            assert!(est.value <= width_bound_spike(200, 5, r).unwrap() + 3.0 * est.std_err);
            assert!(est.std_err <= 0.02 * est.value);
        }
        // R = 1 is the classic l1 statistical dimension; compare with its
        // one-dimensional integral form, minimized over a fine grid
        let std = width_mc_estimate(1000, 10, 1.0, 2000, &grid, 4).unwrap();
        let exact = (1..4000)
            .map(|k| classic_width(1000.0, 10.0, k as f64 * 1e-3))
            .fold(f64::INFINITY, f64::min);
        assert!((std.value - exact).abs() <= 3.0 * std.std_err + 0.5, "{} vs {exact}", std.value);
        // the 2 s ln(p/s) heuristic overshoots by about a third here
        let formula = 2.0 * 10.0 * 100f64.ln();
        assert!((std.value / formula - 0.665).abs() < 0.02, "{}", std.value / formula);
    }

    /// `s (1 + t^2) + (p - s) E (|g| - t)_+^2` by Simpson's rule.
    fn classic_width(p: f64, s: f64, t: f64) -> f64 {
        let (steps, hi) = (4000, 12.0);
        let h = (hi - t) / steps as f64;
        let f = |x: f64| 2.0 * (x - t).powi(2) * (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = f(t) + f(hi);
        for i in 1..steps {
            acc += f(t + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * (1.0 + t * t) + (p - s) * acc * h / 3.0
    }

    #[test]
    fn covariance_spectrum_and_sqrt() {
        let pattern = random_sign_pattern(12, 3, 5).unwrap();
        assert_eq!(pattern.iter().filter(|v| **v != 0).count(), 3);
        let cov = SpikedCovariance::new(pattern.clone(), 6.0).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(cov.matrix()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[11] - 6.0).abs() < 1e-12);
        assert!(ev[..11].iter().all(|e| (e - 1.0).abs() < 1e-12));
        // closed form I + (sqrt(R) - 1) u u^T with u = s / sqrt(s)
        let u = DVector::from_iterator(12, pattern.iter().map(|&v| v as f64 / 3f64.sqrt()));
        let closed = DMatrix::identity(12, 12) + &u * u.transpose() * (6f64.sqrt() - 1.0);
        assert!((cov.sqrt().unwrap() - closed).amax() < 1e-12);
        assert!(SpikedCovariance::new(vec![0, 0], 2.0).is_err());
    }

    #[test]
    fn general_covariance_is_positive_definite() {
        let pattern = random_sign_pattern(10, 2, 1).unwrap();
        let f = DMatrix::from_row_slice(10, 1, &rng::normal_vec(&mut rng::stream(2, 0), 10, 1.0));
        let cov = SpikedCovariance::new(pattern, 3.0)
            .unwrap()
            .with_low_rank(f)
            .unwrap()
            .with_tail(4.0, 9)
            .unwrap();
        let d = cov.tail_diag.as_ref().unwrap();
        assert!(d.iter().all(|v| (0.25..=1.0).contains(v)));
        let sq = cov.sqrt().unwrap();
        assert!((&sq * &sq - cov.matrix()).amax() < 1e-10);
    }

    #[test]
    fn sampled_rows_match_covariance() {
        let cov = SpikedCovariance::new(random_sign_pattern(20, 4, 2).unwrap(), 5.0).unwrap();
        let sqrt = cov.sqrt().unwrap();
        let inst = sample_instance(&cov, &sqrt, 100_000, 7);
        let emp = inst.x.transpose() * &inst.x / 100_000.0;
        let m = cov.matrix();
        assert!((emp - &m).norm() / m.norm() <= 0.03);
        assert_eq!(inst.theta_star.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn square_system_returns_unique_point() {
        let cov = SpikedCovariance::new(random_sign_pattern(30, 4, 1).unwrap(), 1.0).unwrap();
        let inst = sample_instance(&cov, &cov.sqrt().unwrap(), 30, 3);
        let res = basis_pursuit(&inst.x, &inst.b, BP_TOL, BP_MAX_ITERS).unwrap();
        assert!(res.converged);
        assert!((&res.theta - &inst.theta_star).amax() <= 1e-6);
        let zero = basis_pursuit(&inst.x, &DVector::zeros(30), BP_TOL, BP_MAX_ITERS).unwrap();
        assert_eq!(zero.theta, DVector::zeros(30));
    }

    #[test]
    fn identity_covariance_recovery_regime() {
        let (p, s) = (200, 5);
        let n = 2 * (2.0 * s as f64 * (p as f64 / s as f64).ln()).ceil() as usize;
        let curve = phase_curve(p, s, 1.0, &[n], 50, 21).unwrap();
        assert!(curve[0].rate >= 0.9, "{curve:?}");
    }

    #[test]
    fn successful_solutions_are_certified() {
        let cov = SpikedCovariance::new(random_sign_pattern(100, 4, 8).unwrap(), 1.0).unwrap();
        let sqrt = cov.sqrt().unwrap();
        for t in 0..5 {
            let inst = sample_instance(&cov, &sqrt, 40, t);
            let res = basis_pursuit(&inst.x, &inst.b, BP_TOL, BP_MAX_ITERS).unwrap();
            if res.converged {
                assert!(res.theta.lp_norm(1) <= inst.theta_star.lp_norm(1) + 1e-6);
                assert!((&inst.x * &res.theta - &inst.b).norm() <= 1e-6 * inst.b.norm());
            }
        }
    }

    #[test]
    fn phase_curve_is_deterministic() {
        let a = phase_curve(60, 3, 2.0, &[10, 20], 6, 4).unwrap();
        let b = phase_curve(60, 3, 2.0, &[10, 20], 6, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(crossing(&a, 0.0), Some(10));
    }
}
