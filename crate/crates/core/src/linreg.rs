//! Gaussian linear regression under diagonal feature scaling.
//!
//! Raw features are `x ~ N(0, I_p)` and the learner sees `x' = Lambda x`.
//! Labels stay `y = x^T theta_bar + z`, so the population minimizer in the
//! scaled coordinates is `Lambda^{-1} theta_bar` and every scaled model
//! `theta` has test loss `||Lambda theta - theta_bar||^2 + sigma^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::importance::{check_dim, IndexSet, WeightVector};
use crate::linalg;
use crate::rng;

/// Positive diagonal feature scaling `Lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagScaling(Vec<f64>);

impl DiagScaling {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::OutOfRange("scaling must have at least one entry".into()));
        }
        if let Some(i) = diag.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::OutOfRange(format!(
                "scaling entry {i} must be positive and finite"
            )));
        }
        Ok(Self(diag))
    }

    pub fn identity(p: usize) -> Self {
        Self(vec![1.0; p])
    }

    pub fn uniform(p: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; p])
    }

    /// `lambda` on `delta`, 1 elsewhere.
    pub fn on_set(delta: &IndexSet, lambda: f64) -> Result<Self> {
        let mut d = vec![1.0; delta.dim()];
        for &i in delta.indices() {
            d[i] = lambda;
        }
        Self::new(d)
    }

    pub fn diag(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Diagonal of the scaled covariance `Lambda^2`.
    pub fn covariance(&self) -> Vec<f64> {
        self.0.iter().map(|l| l * l).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.0).map(|(x, l)| x * l).collect()
    }

    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.0).map(|(x, l)| x / l).collect()
    }
}

/// Head-block scaling: `lambda` on the first `ceil(head_fraction * p)`
/// coordinates, 1 on the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScalingSpec {
    pub lambda: f64,
    pub head_fraction: f64,
}

impl BlockScalingSpec {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            head_fraction: 0.10,
        }
    }

    pub fn head_len(&self, p: usize) -> usize {
        ((self.head_fraction * p as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn build(&self, p: usize) -> Result<DiagScaling> {
        if !(self.head_fraction > 0.0 && self.head_fraction <= 1.0) {
            return Err(Error::OutOfRange("head_fraction must be in (0, 1]".into()));
        }
        let head = self.head_len(p).min(p);
        DiagScaling::new(
            (0..p)
                .map(|i| if i < head { self.lambda } else { 1.0 })
                .collect(),
        )
    }
}

/// A sampled training set. `x` holds the scaled features `Lambda x_i` as rows.
#[derive(Debug, Clone)]
pub struct LinearDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub ground_truth: Vec<f64>,
    pub scaling: DiagScaling,
    pub noise_std: f64,
    pub seed: u64,
}

impl LinearDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Samples `n` rows `x_i ~ N(0, I_p)`, scales features by `Lambda`, and
/// labels them with `x_i^T theta_bar + N(0, sigma^2)`.
pub fn generate_dataset(
    p: usize,
    n: usize,
    theta_bar: &[f64],
    sigma: f64,
    scaling: &DiagScaling,
    seed: u64,
) -> Result<LinearDataset> {
    if p == 0 || n == 0 {
        return Err(Error::OutOfRange("p and n must be positive".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::OutOfRange("sigma must be >= 0".into()));
    }
    check_dim(p, theta_bar.len())?;
    check_dim(p, scaling.dim())?;
    let mut r = rng::stream(seed, 0);
    let raw: Vec<f64> = rng::normal_vec(&mut r, n * p, 1.0);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let row = &raw[i * p..(i + 1) * p];
        let clean: f64 = row.iter().zip(theta_bar).map(|(a, b)| a * b).sum();
        y[i] = clean + sigma * rng::normal(&mut r);
    }
    let lam = scaling.diag();
    let x = DMatrix::from_fn(n, p, |i, j| raw[i * p + j] * lam[j]);
    Ok(LinearDataset {
        x,
        y,
        ground_truth: theta_bar.to_vec(),
        scaling: scaling.clone(),
        noise_std: sigma,
        seed,
    })
}

/// Unit-norm vector proportional to `1 / (1 + 4i/p)^2`, `i = 1..=p`.
pub fn decaying_ground_truth(p: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=p)
        .map(|i| 1.0 / (1.0 + 4.0 * i as f64 / p as f64).powi(2))
        .collect();
    let norm = linalg::sq_norm(&raw).sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

/// Least-squares solution of minimum Euclidean norm.
///
/// `n >= p`: ordinary least squares via QR. `n < p`: the interpolator
/// `X^T (X X^T)^{-1} y`.
pub fn min_norm_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    check_dim(n, y.len())?;
    if n < p {
        let gram = x * x.transpose();
        let a = linalg::spd_solve(&gram, y)?;
        Ok(x.tr_mul(&a))
    } else {
        let qr = x.clone().qr();
        let r = qr.r();
        let (lo, hi) = r.diagonal().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
        if !(lo > 0.0) || (hi / lo).powi(2) > linalg::MAX_CONDITION {
            return Err(Error::Singular("design is rank deficient".into()));
        }
        let qty = qr.q().tr_mul(y);
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))
    }
}

pub fn min_norm_solution(data: &LinearDataset) -> Result<WeightVector> {
    let theta = min_norm_solve(&data.x, &data.y)?;
    WeightVector::new(theta.iter().copied().collect())
}

/// `Lambda^{-1} theta_bar`.
pub fn population_solution(theta_bar: &[f64], scaling: &DiagScaling) -> Result<WeightVector> {
    check_dim(scaling.dim(), theta_bar.len())?;
    WeightVector::new(scaling.apply_inverse(theta_bar))
}

/// `||Lambda theta - theta_bar||^2 + sigma^2`.
pub fn population_test_loss(
    theta: &[f64],
    theta_bar: &[f64],
    scaling: &DiagScaling,
    sigma: f64,
) -> Result<f64> {
    check_dim(theta_bar.len(), theta.len())?;
    check_dim(scaling.dim(), theta.len())?;
    Ok(linalg::sq_dist(&scaling.apply(theta), theta_bar) + sigma * sigma)
}

/// First coordinate of `Lambda X^T (X Lambda X^T)^{-1} y` for
/// `Lambda = diag(lambda, 1, ..., 1)`, in the closed form
/// `x^T C y / (1/lambda + x^T C x)` with `x` the first column and
/// `C = (X X^T - x x^T)^{-1}`.
pub fn scaled_pinv_first_entry(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<f64> {
    let (n, p) = x.shape();
    if n >= p {
        return Err(Error::Contract(format!("requires n < p, got n={n}, p={p}")));
    }
    check_dim(n, y.len())?;
    if !(lambda > 0.0) {
        return Err(Error::OutOfRange("lambda must be positive".into()));
    }
    let rest = x.columns(1, p - 1);
    let gram = rest * rest.transpose();
    let first = x.column(0).into_owned();
    let cy = linalg::spd_solve(&gram, y)?;
    let cx = linalg::spd_solve(&gram, &first)?;
    Ok(first.dot(&cy) / (1.0 / lambda + first.dot(&cx)))
}

/// Population risk of the min-norm solution as the scaling on `delta` grows.
#[derive(Debug, Clone)]
pub struct SparseScalingSetup {
    pub p: usize,
    pub n: usize,
    pub theta_bar: Vec<f64>,
    pub delta: IndexSet,
    pub seed: u64,
}

/// For each `lambda`, scales the features in `delta` by `lambda`, fits the
/// min-norm interpolator on one shared noiseless design, and reports
/// `||Lambda theta_hat - theta_bar||^2`.
pub fn sparse_scaling_risk_curve(
    setup: &SparseScalingSetup,
    lambdas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let SparseScalingSetup {
        p,
        n,
        theta_bar,
        delta,
        seed,
    } = setup;
    check_dim(*p, theta_bar.len())?;
    check_dim(*p, delta.dim())?;
    if let Some(i) = (0..*p).find(|&i| theta_bar[i] != 0.0 && !delta.contains(i)) {
        return Err(Error::Contract(format!(
            "ground truth has support outside delta at index {i}"
        )));
    }
    if *n <= delta.len() {
        return Err(Error::Contract(format!(
            "needs n > |delta|, got n={n}, |delta|={}",
            delta.len()
        )));
    }
    let base = generate_dataset(*p, *n, theta_bar, 0.0, &DiagScaling::identity(*p), *seed)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let scaling = DiagScaling::on_set(delta, lambda)?;
            let xs = DMatrix::from_fn(*n, *p, |i, j| base.x[(i, j)] * scaling.diag()[j]);
            let theta = min_norm_solve(&xs, &base.y)?;
            let risk = population_test_loss(theta.as_slice(), theta_bar, &scaling, 0.0)?;
            Ok((lambda, risk))
        })
        .collect()
}

/// Plain gradient descent on `0.5 ||y - X theta||^2` from zero with step
/// `0.9 / ||X||^2`, until the gradient norm drops below `tol`.
pub fn gradient_descent_from_zero(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> DVector<f64> {
    let eta = 0.9 / linalg::spectral_norm_sq(x, 50);
    let mut theta = DVector::zeros(x.ncols());
    for _ in 0..max_iters {
        let resid = y - x * &theta;
        let grad = x.tr_mul(&resid);
        if grad.norm() <= tol {
            break;
        }
        theta += eta * grad;
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn scaling_validation() {
        assert!(DiagScaling::new(vec![1.0, 0.0]).is_err());
        assert!(DiagScaling::new(vec![1.0, -2.0]).is_err());
        assert!(DiagScaling::new(vec![]).is_err());
        let b = BlockScalingSpec::new(5.0).build(1000).unwrap();
        assert_eq!(b.diag().iter().filter(|&&d| d == 5.0).count(), 100);
        assert_eq!(b.diag()[99], 5.0);
        assert_eq!(b.diag()[100], 1.0);
        let odd = BlockScalingSpec::new(2.0).build(15).unwrap();
        assert_eq!(odd.diag().iter().filter(|&&d| d == 2.0).count(), 2);
    }

    #[test]
    fn noiseless_identity_labels_match_first_column() {
        let mut e1 = vec![0.0; 4];
        e1[0] = 1.0;
        let d = generate_dataset(4, 7, &e1, 0.0, &DiagScaling::identity(4), 3).unwrap();
        for i in 0..7 {
            assert_eq!(d.y[i], d.x[(i, 0)]);
        }
        assert!(generate_dataset(0, 3, &[], 0.0, &DiagScaling::identity(1), 0).is_err());
        assert!(generate_dataset(1, 1, &[1.0], -1.0, &DiagScaling::identity(1), 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let tb = decaying_ground_truth(5);
        let s = DiagScaling::new(vec![2.0, 1.0, 1.0, 0.5, 1.0]).unwrap();
        let a = generate_dataset(5, 4, &tb, 0.1, &s, 11).unwrap();
        let b = generate_dataset(5, 4, &tb, 0.1, &s, 11).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn scaled_covariance_moments() {
        let p = 4;
        let s = DiagScaling::new(vec![2.0, 1.0, 0.5, 3.0]).unwrap();
        let d = generate_dataset(p, 100_000, &vec![0.0; p], 0.0, &s, 5).unwrap();
        for j in 0..p {
            let var = d.x.column(j).iter().map(|v| v * v).sum::<f64>() / 100_000.0;
            let target = s.diag()[j].powi(2);
            assert!((var / target - 1.0).abs() < 0.02, "col {j}: {var} vs {target}");
        }
    }

    #[test]
    fn decaying_truth_properties() {
        let v = decaying_ground_truth(1000);
        assert!((linalg::sq_norm(&v).sqrt() - 1.0).abs() < 1e-12);
        assert!(v.windows(2).all(|w| w[0] > w[1]));
        let v2 = decaying_ground_truth(2);
        let raw: [f64; 2] = [1.0 / 9.0, 1.0 / 25.0];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert!((v2[0] - raw[0] / norm).abs() < 1e-15);
        assert!((v2[1] - raw[1] / norm).abs() < 1e-15);
    }

    #[test]
    fn min_norm_hand_example() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0]);
        let t = min_norm_solve(&x, &y).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-14 && (t[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn min_norm_interpolates_when_overparameterized() {
        let tb = decaying_ground_truth(60);
        let d = generate_dataset(60, 25, &tb, 0.1, &BlockScalingSpec::new(3.0).build(60).unwrap(), 1)
            .unwrap();
        let t = min_norm_solve(&d.x, &d.y).unwrap();
        assert!((&d.y - &d.x * &t).norm() <= 1e-8 * d.y.norm());
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(min_norm_solve(&x, &y), Err(Error::Singular(_))));
        let tall = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            min_norm_solve(&tall, &DVector::from_vec(vec![1.0, 2.0, 3.0])),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn underparameterized_scale_invariance() {
        let p = 8;
        let tb = decaying_ground_truth(p);
        let s = DiagScaling::new(vec![5.0, 0.5, 1.0, 2.0, 1.0, 1.0, 3.0, 0.25]).unwrap();
        let plain = generate_dataset(p, 30, &tb, 0.1, &DiagScaling::identity(p), 4).unwrap();
        let scaled = generate_dataset(p, 30, &tb, 0.1, &s, 4).unwrap();
        let t0 = min_norm_solve(&plain.x, &plain.y).unwrap();
        let t1 = min_norm_solve(&scaled.x, &scaled.y).unwrap();
        let back = s.apply_inverse(t0.as_slice());
        for i in 0..p {
            assert!((t1[i] - back[i]).abs() <= 1e-8 * back[i].abs().max(1e-12));
        }
        let pred0 = &plain.x * &t0;
        let pred1 = &scaled.x * &t1;
        for i in 0..30 {
            assert!((pred0[i] - pred1[i]).abs() <= 1e-8 * pred0[i].abs().max(1.0));
        }
    }

    #[test]
    fn overparameterized_scale_dependence() {
        let p = 40;
        let tb = decaying_ground_truth(p);
        let s = BlockScalingSpec::new(4.0).build(p).unwrap();
        for seed in 0..3 {
            let plain = generate_dataset(p, 15, &tb, 0.1, &DiagScaling::identity(p), seed).unwrap();
            let scaled = generate_dataset(p, 15, &tb, 0.1, &s, seed).unwrap();
            let t0 = min_norm_solve(&plain.x, &plain.y).unwrap();
            let t1 = min_norm_solve(&scaled.x, &scaled.y).unwrap();
            let gap = linalg::sq_dist(&s.apply(t1.as_slice()), t0.as_slice()).sqrt();
            assert!(gap > 1e-6);
        }
    }

    #[test]
    fn gradient_descent_reaches_min_norm() {
        let p = 30;
        let tb = decaying_ground_truth(p);
        let d = generate_dataset(p, 12, &tb, 0.1, &BlockScalingSpec::new(2.0).build(p).unwrap(), 9)
            .unwrap();
        let gd = gradient_descent_from_zero(&d.x, &d.y, 1e-12, 1_000_000);
        assert!((&d.y - &d.x * &gd).norm() <= 1e-10 * d.y.norm().max(1.0) * 10.0);
        let mn = min_norm_solve(&d.x, &d.y).unwrap();
        assert!((gd - mn).norm() <= 1e-6);
    }

    #[test]
    fn population_solution_and_loss() {
        let tb = vec![1.0, 2.0];
        assert_eq!(
            population_solution(&tb, &DiagScaling::identity(2)).unwrap().as_slice(),
            &[1.0, 2.0]
        );
        let s = DiagScaling::new(vec![2.0, 1.0]).unwrap();
        let ps = population_solution(&tb, &s).unwrap();
        assert_eq!(ps.as_slice(), &[0.5, 2.0]);
        assert!((population_test_loss(ps.as_slice(), &tb, &s, 0.3).unwrap() - 0.09).abs() < 1e-15);
        assert!((population_test_loss(&[0.0, 0.0], &tb, &s, 0.3).unwrap() - 5.09).abs() < 1e-12);
        let unit = decaying_ground_truth(10);
        let l = population_test_loss(&[0.0; 10], &unit, &DiagScaling::identity(10), 0.1).unwrap();
        assert!((l - 1.01).abs() < 1e-12);
    }

    #[test]
    fn population_loss_matches_monte_carlo() {
        let p = 5;
        let tb = decaying_ground_truth(p);
        let s = DiagScaling::new(vec![2.0, 0.5, 1.0, 3.0, 1.0]).unwrap();
        let theta = vec![0.1, -0.4, 0.2, 0.05, 0.3];
        let sigma = 0.2;
        let exact = population_test_loss(&theta, &tb, &s, sigma).unwrap();
        let mut r = rng::stream(42, 0);
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = rng::normal_vec(&mut r, p, 1.0);
            let y: f64 = x.iter().zip(&tb).map(|(a, b)| a * b).sum::<f64>() + sigma * rng::normal(&mut r);
            let pred: f64 = x.iter().zip(s.diag()).zip(&theta).map(|((a, l), t)| a * l * t).sum();
            acc += (y - pred).powi(2);
        }
        let mc = acc / samples as f64;
        assert!((mc / exact - 1.0).abs() < 0.01, "{mc} vs {exact}");
    }

    fn pinv_instance(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = rng::stream(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng::normal(&mut r));
        let y = DVector::from_fn(n, |_, _| rng::normal(&mut r));
        (x, y)
    }

    /// First entry of `Lambda X^T (X Lambda X^T)^{-1} y` computed directly.
    fn direct_first_entry(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let mut d = vec![1.0; x.ncols()];
        d[0] = lambda;
        let lam = DMatrix::from_diagonal(&DVector::from_vec(d));
        let m = x * &lam * x.transpose();
        let a = m.lu().solve(y).unwrap();
        (lam * x.transpose() * a)[0]
    }

    #[test]
    fn pinv_first_entry_matches_direct_and_limits() {
        let (x, y) = pinv_instance(3, 3, 6);
        for lambda in [0.1, 0.5, 1.0, 2.0, 4.0, 30.0] {
            let f = scaled_pinv_first_entry(&x, &y, lambda).unwrap();
            let d = direct_first_entry(&x, &y, lambda);
            assert!((f - d).abs() < 1e-9 * d.abs().max(1.0), "{lambda}: {f} vs {d}");
        }
        assert!(scaled_pinv_first_entry(&x, &y, 1e-12).unwrap().abs() < 1e-10);
        let big = scaled_pinv_first_entry(&x, &y, 1e6).unwrap();
        let limit = direct_first_entry(&x, &y, 1e9);
        assert!((big - limit).abs() <= 1e-5 * limit.abs().max(1.0));
        let vals: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&l| scaled_pinv_first_entry(&x, &y, l).unwrap().abs())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
        assert!(scaled_pinv_first_entry(&x, &y, 0.0).is_err());
        let (xt, yt) = pinv_instance(1, 4, 4);
        assert!(matches!(scaled_pinv_first_entry(&xt, &yt, 1.0), Err(Error::Contract(_))));
    }

    fn sparse_setup(n: usize, k: usize) -> SparseScalingSetup {
        let p = 50;
        let mut tb = vec![0.0; p];
        for (i, t) in tb.iter_mut().take(k).enumerate() {
            *t = 1.0 / (1.0 + i as f64);
        }
        SparseScalingSetup {
            p,
            n,
            theta_bar: tb,
            delta: IndexSet::range(0, k, p).unwrap(),
            seed: 17,
        }
    }

    #[test]
    fn sparse_scaling_risk_decreases() {
        let setup = sparse_setup(20, 5);
        let curve =
            sparse_scaling_risk_curve(&setup, &[0.5, 1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 < w[0].1), "{curve:?}");
        let far = sparse_scaling_risk_curve(&setup, &[1e6]).unwrap();
        assert!(far[0].1 <= 1e-6, "{far:?}");
    }

    #[test]
    fn sparse_scaling_contracts() {
        let mut bad = sparse_setup(20, 5);
        bad.theta_bar[10] = 1.0;
        assert!(matches!(sparse_scaling_risk_curve(&bad, &[1.0]), Err(Error::Contract(_))));
        let tight = sparse_setup(5, 5);
        assert!(matches!(sparse_scaling_risk_curve(&tight, &[1.0]), Err(Error::Contract(_))));
    }
}
