//! Auxiliary-distribution predictor for pruning an over-parameterized
//! least-squares fit.
//!
//! With `kappa = p / n > 1`, the min-norm solution on `Lambda`-scaled
//! features is modelled by
//!
//! ```text
//! theta_aux = Lambda^{-1} [ (1 - zeta) ⊙ theta_bar + gamma ⊙ h ],   h ~ N(0, I_p / p)
//! ```
//!
//! where `Xi > 0` solves `1 = (kappa/p) Σ 1 / (1 + (Xi Λ_ii²)^{-1})` and
//! `zeta`, `gamma`, `Gamma` follow in closed form. Magnitude pruning ranks
//! `|theta_aux|`; Hessian pruning ranks `|Lambda theta_aux|`. Both are
//! scored by `||Lambda theta_pruned - theta_bar||^2 + sigma^2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::importance::{check_dim, ranking};
use crate::linreg::{self, DiagScaling};
use crate::rng;

/// Fixed-point residual accepted by [`solve_aux`].
pub const AUX_TOLERANCE: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PruneMethod {
    Magnitude,
    Hessian,
}

impl PruneMethod {
    pub fn label(self) -> &'static str {
        match self {
            PruneMethod::Magnitude => "MP",
            PruneMethod::Hessian => "HP",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuxParams {
    pub xi: f64,
    pub gamma_bar: f64,
    pub zeta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub kappa: f64,
    pub sigma: f64,
    pub scaling: DiagScaling,
    pub theta_bar: Vec<f64>,
}

impl AuxParams {
    pub fn p(&self) -> usize {
        self.theta_bar.len()
    }

    /// `|F(Xi) - 1|` for the fixed-point map `F`.
    pub fn residual(&self) -> f64 {
        (fixed_point_map(self.xi, self.kappa, self.scaling.diag()) - 1.0).abs()
    }
}

/// `(kappa/p) Σ 1 / (1 + (Xi Λ_ii²)^{-1})`; strictly increasing from 0 to kappa.
pub fn fixed_point_map(xi: f64, kappa: f64, lambda: &[f64]) -> f64 {
    let p = lambda.len() as f64;
    let sum: f64 = lambda
        .iter()
        .map(|l| {
            let t = xi * l * l;
            t / (1.0 + t)
        })
        .sum();
    kappa / p * sum
}

pub fn solve_aux(
    kappa: f64,
    sigma: f64,
    scaling: &DiagScaling,
    theta_bar: &[f64],
) -> Result<AuxParams> {
    if !(kappa > 1.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!(
            "kappa = p/n must exceed 1 for the fixed point to exist, got {kappa}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::OutOfRange("sigma must be >= 0".into()));
    }
    check_dim(scaling.dim(), theta_bar.len())?;
    let lam = scaling.diag();
    let p = lam.len() as f64;
    let f = |xi: f64| fixed_point_map(xi, kappa, lam) - 1.0;

    let mut lo = 1e-12;
    while f(lo) > 0.0 {
        lo *= 1e-3;
        if lo == 0.0 {
            return Err(Error::Degenerate("cannot bracket the fixed point from below".into()));
        }
    }
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Degenerate("cannot bracket the fixed point from above".into()));
        }
    }
    let mut xi = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        xi = 0.5 * (lo + hi);
        let r = f(xi);
        if r.abs() <= AUX_TOLERANCE * 1e-2 || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r < 0.0 {
            lo = xi;
        } else {
            hi = xi;
        }
    }
    let residual = f(xi).abs();
    if residual > AUX_TOLERANCE {
        return Err(Error::Degenerate(format!(
            "fixed point residual {residual:e} above tolerance"
        )));
    }

    let ratio: Vec<f64> = lam
        .iter()
        .map(|l| {
            let t = xi * l * l;
            t / (1.0 + t)
        })
        .collect();
    let zeta: Vec<f64> = lam.iter().map(|l| 1.0 / (1.0 + xi * l * l)).collect();
    let denom = kappa * (1.0 - kappa / p * ratio.iter().map(|r| r * r).sum::<f64>());
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "Gamma denominator is not positive ({denom:e})"
        )));
    }
    let numer = sigma * sigma
        + zeta
            .iter()
            .zip(theta_bar)
            .map(|(z, t)| z * z * t * t)
            .sum::<f64>();
    let gamma_bar = numer / denom;
    let gamma = ratio.iter().map(|r| kappa * gamma_bar.sqrt() * r).collect();
    Ok(AuxParams {
        xi,
        gamma_bar,
        zeta,
        gamma,
        kappa,
        sigma,
        scaling: scaling.clone(),
        theta_bar: theta_bar.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct AuxSample {
    pub theta_aux: Vec<f64>,
    pub h: Vec<f64>,
}

/// `Lambda theta_aux = (1 - zeta) ⊙ theta_bar + gamma ⊙ h`.
fn scaled_aux(params: &AuxParams, h: &[f64]) -> Vec<f64> {
    params
        .zeta
        .iter()
        .zip(&params.gamma)
        .zip(&params.theta_bar)
        .zip(h)
        .map(|(((z, g), t), hi)| (1.0 - z) * t + g * hi)
        .collect()
}

pub fn aux_from_h(params: &AuxParams, h: Vec<f64>) -> AuxSample {
    let theta_aux = params.scaling.apply_inverse(&scaled_aux(params, &h));
    AuxSample { theta_aux, h }
}

/// Draws `h ~ N(0, I_p / p)` from stream `(seed, 0)`.
pub fn sample_aux(params: &AuxParams, seed: u64) -> AuxSample {
    sample_aux_stream(params, seed, 0)
}

fn sample_aux_stream(params: &AuxParams, seed: u64, index: u64) -> AuxSample {
    let p = params.p();
    let mut r = rng::stream(seed, index);
    let h = rng::normal_vec(&mut r, p, 1.0 / (p as f64).sqrt());
    aux_from_h(params, h)
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl LossEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_err = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err }
    }
}

/// Excess loss `||u_K - theta_bar||^2` at each sparsity `s`, where the kept
/// set `K` is the first `s` entries of `order`. Summation runs in coordinate
/// order so equal kept sets give bit-identical losses.
fn kept_losses(u: &[f64], theta_bar: &[f64], order: &[usize], sparsities: &[usize]) -> Vec<f64> {
    let mut rank = vec![0usize; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    sparsities
        .iter()
        .map(|&s| {
            (0..u.len())
                .map(|i| {
                    if rank[i] < s {
                        (u[i] - theta_bar[i]).powi(2)
                    } else {
                        theta_bar[i] * theta_bar[i]
                    }
                })
                .sum()
        })
        .collect()
}

/// Pruned excess loss for both methods at each requested sparsity, given a
/// model `theta` in scaled coordinates.
fn pruned_losses(
    theta: &[f64],
    scaling: &DiagScaling,
    theta_bar: &[f64],
    sparsities: &[usize],
) -> [Vec<f64>; 2] {
    let u = scaling.apply(theta);
    let mag: Vec<f64> = theta.iter().map(|t| t * t).collect();
    let hess: Vec<f64> = u.iter().map(|t| t * t).collect();
    [
        kept_losses(&u, theta_bar, &ranking(&mag), sparsities),
        kept_losses(&u, theta_bar, &ranking(&hess), sparsities),
    ]
}

/// Pruning-loss curve: `estimates[k][m]` is sparsity `sparsities[k]` under
/// method `m` (0 = magnitude, 1 = Hessian).
#[derive(Debug, Clone)]
pub struct PruneCurve {
    pub sparsities: Vec<usize>,
    pub estimates: Vec<[LossEstimate; 2]>,
}

impl PruneCurve {
    pub fn get(&self, k: usize, method: PruneMethod) -> LossEstimate {
        self.estimates[k][method_index(method)]
    }
}

fn method_index(m: PruneMethod) -> usize {
    match m {
        PruneMethod::Magnitude => 0,
        PruneMethod::Hessian => 1,
    }
}

fn check_sparsities(sparsities: &[usize], p: usize) -> Result<()> {
    if let Some(&s) = sparsities.iter().find(|&&s| s == 0 || s > p) {
        return Err(Error::OutOfRange(format!("sparsity {s} not in [1, {p}]")));
    }
    Ok(())
}

fn aggregate(per_draw: Vec<[Vec<f64>; 2]>, sparsities: &[usize], sigma: f64) -> PruneCurve {
    let noise = sigma * sigma;
    let estimates = (0..sparsities.len())
        .map(|k| {
            let est = |m: usize| {
                let xs: Vec<f64> = per_draw.iter().map(|d| d[m][k] + noise).collect();
                LossEstimate::from_samples(&xs)
            };
            [est(0), est(1)]
        })
        .collect();
    PruneCurve {
        sparsities: sparsities.to_vec(),
        estimates,
    }
}

/// Predicted test loss of the pruned min-norm solution at each sparsity,
/// averaged over `mc_samples` draws of `h` (draw `j` uses stream `(seed, j)`;
/// both methods share draws).
pub fn predict_prune_curve(
    params: &AuxParams,
    sparsities: &[usize],
    mc_samples: usize,
    seed: u64,
) -> Result<PruneCurve> {
    check_sparsities(sparsities, params.p())?;
    if mc_samples == 0 {
        return Err(Error::OutOfRange("mc_samples must be >= 1".into()));
    }
    let per_draw: Vec<[Vec<f64>; 2]> = (0..mc_samples as u64)
        .into_par_iter()
        .map(|j| {
            let sample = sample_aux_stream(params, seed, j);
            pruned_losses(&sample.theta_aux, &params.scaling, &params.theta_bar, sparsities)
        })
        .collect();
    Ok(aggregate(per_draw, sparsities, params.sigma))
}

pub fn predict_prune_loss(
    params: &AuxParams,
    s: usize,
    method: PruneMethod,
    mc_samples: usize,
    seed: u64,
) -> Result<LossEstimate> {
    Ok(predict_prune_curve(params, &[s], mc_samples, seed)?.get(0, method))
}

/// Parameters of the sampled regression problem behind the empirical curve.
#[derive(Debug, Clone)]
pub struct EmpiricalSetup {
    pub p: usize,
    pub n: usize,
    pub sigma: f64,
    pub theta_bar: Vec<f64>,
    pub scaling: DiagScaling,
}

/// Test loss of the pruned min-norm solution, averaged over `trials` fresh
/// datasets (trial `t` uses seed `child_seed(seed, t)`). Magnitude pruning
/// scores `theta_i^2`; Hessian pruning scores `Λ_ii² theta_i^2`.
pub fn empirical_prune_curve(
    setup: &EmpiricalSetup,
    sparsities: &[usize],
    trials: usize,
    seed: u64,
) -> Result<PruneCurve> {
    check_sparsities(sparsities, setup.p)?;
    if trials == 0 {
        return Err(Error::OutOfRange("trials must be >= 1".into()));
    }
    let per_trial: Result<Vec<[Vec<f64>; 2]>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let data = linreg::generate_dataset(
                setup.p,
                setup.n,
                &setup.theta_bar,
                setup.sigma,
                &setup.scaling,
                rng::child_seed(seed, t),
            )?;
            let theta = linreg::min_norm_solution(&data)?;
            Ok(pruned_losses(
                theta.as_slice(),
                &setup.scaling,
                &setup.theta_bar,
                sparsities,
            ))
        })
        .collect();
    Ok(aggregate(per_trial?, sparsities, setup.sigma))
}

pub fn empirical_prune_loss(
    setup: &EmpiricalSetup,
    s: usize,
    method: PruneMethod,
    trials: usize,
    seed: u64,
) -> Result<LossEstimate> {
    Ok(empirical_prune_curve(setup, &[s], trials, seed)?.get(0, method))
}
