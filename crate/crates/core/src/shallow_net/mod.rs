//! λ-scaled two-layer ReLU networks: training, per-layer importances,
//! lottery-style prune-and-retrain, and the λ sweep.

pub mod data;
mod net;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use data::{ClassifDataset, DataSource, MixtureSpec};
pub use net::{LayerPair, LossKind, TwoLayerNet};

use crate::cgmt::PruneMethod;
use crate::error::{Error, Result};
use crate::importance::{ablate, group_quota, top_indices, IndexSet};
use crate::rng;

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub interpolation_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 0,
            learning_rate: 0.05,
            loss_kind: LossKind::CrossEntropy,
            seed: 0,
            interpolation_threshold: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::OutOfRange(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.interpolation_threshold >= 0.0) {
            return Err(Error::OutOfRange("interpolation threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Keep/zero pattern over the flattened parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(dim: usize) -> Self {
        Self { bits: vec![true; dim] }
    }

    pub fn from_indices(keep: &[usize], dim: usize) -> Result<Self> {
        let mut bits = vec![false; dim];
        for &i in keep {
            if i >= dim {
                return Err(Error::InvalidIndexSet(format!("index {i} out of range {dim}")));
            }
            bits[i] = true;
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fraction of `set` kept.
    pub fn kept_fraction(&self, set: &IndexSet) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let kept = set.indices().iter().filter(|&&i| self.bits[i]).count();
        kept as f64 / set.len() as f64
    }

    pub fn apply(&self, theta: &mut [f64]) {
        for (t, &b) in theta.iter_mut().zip(&self.bits) {
            if !b {
                *t = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TwoLayerNet,
    /// Train loss before the first epoch, then after each epoch.
    pub trajectory: Vec<f64>,
    pub epochs_run: usize,
    pub interpolated: bool,
}

pub fn train(net: &TwoLayerNet, data: &ClassifDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_masked(net, data, cfg, None)
}

/// Gradient descent with the gradient multiplied by `mask`, so masked-out
/// coordinates never move. Epoch `e` shuffles mini-batches with stream
/// `(seed, e)`.
pub fn train_masked(
    net: &TwoLayerNet,
    data: &ClassifDataset,
    cfg: &TrainConfig,
    mask: Option<&Mask>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: data.dim(),
        });
    }
    if let Some(m) = mask {
        if m.bits.len() != net.param_count() {
            return Err(Error::DimensionMismatch {
                expected: net.param_count(),
                got: m.bits.len(),
            });
        }
    }
    let mut net = net.clone();
    let kind = cfg.loss_kind;
    let n = data.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let interpolated = |net: &TwoLayerNet, loss: f64| {
        loss <= cfg.interpolation_threshold && net.accuracy(data) >= 1.0
    };

    let mut loss = net.loss(data, kind);
    let mut trajectory = vec![loss];
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs_run = 0;
    let mut done = interpolated(&net, loss);
    while !done && epochs_run < cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng::stream(cfg.seed, epochs_run as u64));
        }
        for chunk in order.chunks(batch) {
            let (_, mut g) = if batch == n {
                net.loss_and_grad(data, kind)
            } else {
                let sub = data.subset(chunk);
                net.loss_and_grad(&sub, kind)
            };
            if let Some(m) = mask {
                mask_grad(m, &mut g);
            }
            net.w -= g.w * cfg.learning_rate;
            net.v -= g.v * cfg.learning_rate;
        }
        epochs_run += 1;
        loss = net.loss(data, kind);
        trajectory.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                epoch: epochs_run,
                loss,
                trajectory,
            });
        }
        done = interpolated(&net, loss);
    }
    log::debug!("trained {epochs_run} epochs, final loss {loss:.3e}");
    Ok(TrainOutcome {
        net,
        trajectory,
        epochs_run,
        interpolated: done,
    })
}

fn mask_grad(mask: &Mask, g: &mut LayerPair) {
    let d = g.w.ncols();
    let nw = g.w.len();
    let m = g.v.ncols();
    for (i, &b) in mask.bits.iter().enumerate() {
        if b {
            continue;
        }
        if i < nw {
            g.w[(i / d, i % d)] = 0.0;
        } else {
            let j = i - nw;
            g.v[(j / m, j % m)] = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerImportances {
    pub mi_w: f64,
    pub mi_v: f64,
    pub hi_w: f64,
    pub hi_v: f64,
    pub ni_w: f64,
    pub ni_v: f64,
}

/// Per-layer MI, HI (Gauss-Newton diagonal) and NI with each layer reset
/// to its value in `init`.
pub fn layer_importances(
    net: &TwoLayerNet,
    init: &TwoLayerNet,
    data: &ClassifDataset,
    kind: LossKind,
) -> Result<LayerImportances> {
    if net.w.shape() != init.w.shape() || net.v.shape() != init.v.shape() {
        return Err(Error::DimensionMismatch {
            expected: net.param_count(),
            got: init.param_count(),
        });
    }
    let sq = |m: &nalgebra::DMatrix<f64>| m.iter().map(|a| a * a).sum::<f64>();
    let gn = net.gauss_newton_diag(data, kind);
    let hi = |h: &nalgebra::DMatrix<f64>, t: &nalgebra::DMatrix<f64>| {
        h.iter().zip(t.iter()).map(|(h, t)| h * t * t).sum::<f64>()
    };
    let base = net.loss(data, kind);
    let mut probe = net.clone();
    probe.w = init.w.clone();
    let ni_w = probe.loss(data, kind) - base;
    probe.w = net.w.clone();
    probe.v = init.v.clone();
    let ni_v = probe.loss(data, kind) - base;
    Ok(LayerImportances {
        mi_w: sq(&net.w),
        mi_v: sq(&net.v),
        hi_w: hi(&gn.w, &net.w),
        hi_v: hi(&gn.v, &net.v),
        ni_w,
        ni_v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub lambda: f64,
    pub w_median_ratio: f64,
    pub v_median_ratio: f64,
    pub w_expected: f64,
    pub v_expected: f64,
    pub w_coords: usize,
    pub v_coords: usize,
}

impl ScalingReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.w_coords > 0
            && self.v_coords > 0
            && (self.w_median_ratio / self.w_expected - 1.0).abs() <= tol
            && (self.v_median_ratio / self.v_expected - 1.0).abs() <= tol
    }
}

/// Estimates Hessian diagonal entries of `net` and of its λ-rescaling by
/// central differences of the analytic gradient, and reports the median
/// per-layer ratio. At most `max_coords` evenly strided coordinates per
/// layer are probed; W coordinates whose step could cross a ReLU kink are
/// skipped.
pub fn hessian_layer_scaling_check(
    net: &TwoLayerNet,
    lambda: f64,
    data: &ClassifDataset,
    kind: LossKind,
    max_coords: usize,
) -> Result<ScalingReport> {
    let scaled = net.lambda_rescale(lambda)?;
    let pre = &data.inputs * net.w.transpose();
    let d = net.input_dim();
    let nw = net.w.len();
    let p = net.param_count();
    let step = |t: f64| 1e-4 * (1.0 + t.abs());

    let near_kink = |i: usize, h1: f64, hl: f64| {
        let (row, col) = (i / d, i % d);
        (0..data.len()).any(|s| {
            let z = pre[(s, row)];
            let x = data.inputs[(s, col)].abs();
            z.abs() < 1e-3 + h1 * x || (lambda * z).abs() < 1e-3 + hl * x
        })
    };
    let fd_diag = |net: &TwoLayerNet, theta: &[f64], i: usize, h: f64| -> Result<f64> {
        let mut probe = net.clone();
        let mut t = theta.to_vec();
        t[i] = theta[i] + h;
        probe.set_flat(&t)?;
        let gp = probe.loss_and_grad(data, kind).1.flatten()[i];
        t[i] = theta[i] - h;
        probe.set_flat(&t)?;
        let gm = probe.loss_and_grad(data, kind).1.flatten()[i];
        Ok((gp - gm) / (2.0 * h))
    };

    let base_flat = net.flatten();
    let scaled_flat = scaled.flatten();
    let mut ratios = [Vec::new(), Vec::new()];
    for (layer, range) in [(0usize, 0..nw), (1, nw..p)] {
        let len = range.len();
        let stride = len.div_ceil(max_coords.max(1)).max(1);
        for i in range.step_by(stride) {
            let (h1, hl) = (step(base_flat[i]), step(scaled_flat[i]));
            if layer == 0 && near_kink(i, h1, hl) {
                continue;
            }
            let a = fd_diag(net, &base_flat, i, h1)?;
            let b = fd_diag(&scaled, &scaled_flat, i, hl)?;
            if a.abs() < 1e-10 {
                continue;
            }
            ratios[layer].push(b / a);
        }
    }
    let med = |v: &mut Vec<f64>| {
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    };
    let [mut rw, mut rv] = ratios;
    Ok(ScalingReport {
        lambda,
        w_median_ratio: med(&mut rw),
        v_median_ratio: med(&mut rv),
        w_expected: lambda.powi(-2),
        v_expected: lambda * lambda,
        w_coords: rw.len(),
        v_coords: rv.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// One quota over all parameters.
    Global,
    /// The same fraction within each layer.
    Layerwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRetrainRecord {
    pub lambda: f64,
    pub method: PruneMethod,
    pub mode: MaskMode,
    pub fraction: f64,
    pub dense_test_accuracy: f64,
    pub test_accuracy: f64,
    pub surviving_fraction_w: f64,
    pub surviving_fraction_v: f64,
    pub dead_w: bool,
    pub dead_v: bool,
}

/// Builds the keep mask from per-parameter scores.
pub fn build_mask(
    net: &TwoLayerNet,
    scores: &[f64],
    fraction: f64,
    mode: MaskMode,
) -> Result<Mask> {
    let p = net.param_count();
    if scores.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: scores.len(),
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange(format!("fraction {fraction} not in (0,1]")));
    }
    match mode {
        MaskMode::Global => Mask::from_indices(&top_indices(scores, group_quota(fraction, p))?, p),
        MaskMode::Layerwise => {
            let (dw, dv) = net.layer_sets();
            let mut keep = Vec::new();
            for set in [dw, dv] {
                let local: Vec<f64> = set.indices().iter().map(|&i| scores[i]).collect();
                for j in top_indices(&local, group_quota(fraction, set.len()))? {
                    keep.push(set.indices()[j]);
                }
            }
            Mask::from_indices(&keep, p)
        }
    }
}

/// Trains `base_init` rescaled by λ, scores the result, and retrains the
/// kept weights from their (rescaled) initial values with the rest fixed
/// at zero.
#[allow(clippy::too_many_arguments)]
pub fn prune_retrain(
    base_init: &TwoLayerNet,
    lambda: f64,
    train_set: &ClassifDataset,
    test_set: &ClassifDataset,
    cfg: &TrainConfig,
    method: PruneMethod,
    fraction: f64,
    mode: MaskMode,
) -> Result<PruneRetrainRecord> {
    let start = base_init.at_init().lambda_rescale(lambda)?;
    let trained = train(&start, train_set, cfg)?.net;
    retrain_pruned(&trained, train_set, test_set, cfg, method, fraction, mode)
}

/// The pruning and retraining half of [`prune_retrain`] for a net already
/// trained from its recorded initialization.
pub fn retrain_pruned(
    trained: &TwoLayerNet,
    train_set: &ClassifDataset,
    test_set: &ClassifDataset,
    cfg: &TrainConfig,
    method: PruneMethod,
    fraction: f64,
    mode: MaskMode,
) -> Result<PruneRetrainRecord> {
    let theta = trained.flatten();
    let scores: Vec<f64> = match method {
        PruneMethod::Magnitude => theta.iter().map(|t| t * t).collect(),
        PruneMethod::Hessian => {
            let gn = trained.gauss_newton_diag(train_set, cfg.loss_kind).flatten();
            gn.iter().zip(&theta).map(|(h, t)| h * t * t).collect()
        }
    };
    let mask = build_mask(trained, &scores, fraction, mode)?;
    let mut restart = trained.init_flat();
    mask.apply(&mut restart);
    let mut sparse = trained.at_init();
    sparse.set_flat(&restart)?;
    let retrained = train_masked(&sparse, train_set, cfg, Some(&mask))?.net;
    let (dw, dv) = trained.layer_sets();
    let sw = mask.kept_fraction(&dw);
    let sv = mask.kept_fraction(&dv);
    if sw == 0.0 || sv == 0.0 {
        log::info!(
            "layer death at lambda={}, fraction={fraction}",
            trained.lambda_scale
        );
    }
    Ok(PruneRetrainRecord {
        lambda: trained.lambda_scale,
        method,
        mode,
        fraction,
        dense_test_accuracy: trained.accuracy(test_set),
        test_accuracy: retrained.accuracy(test_set),
        surviving_fraction_w: sw,
        surviving_fraction_v: sv,
        dead_w: sw == 0.0,
        dead_v: sv == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub init_mi_w: f64,
    pub init_mi_v: f64,
    pub importances: LayerImportances,
    pub train_loss: f64,
    pub test_error: f64,
    /// Test error with W reset to its initial value.
    pub test_error_ablate_w: f64,
    pub test_error_ablate_v: f64,
    pub epochs_run: usize,
}

/// Trains each `θ^λ` from one base initialization and records its layer
/// importances against that λ's initialization. Cells run in parallel.
pub fn ni_vs_lambda_sweep(
    base_init: &TwoLayerNet,
    lambdas: &[f64],
    train_set: &ClassifDataset,
    test_set: &ClassifDataset,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("lambdas must be sorted ascending".into()));
    }
    lambdas
        .par_iter()
        .map(|&lambda| {
            let start = base_init.at_init().lambda_rescale(lambda)?;
            let out = train(&start, train_set, cfg)?;
            let net = out.net;
            let imp = layer_importances(&net, &start, train_set, cfg.loss_kind)?;
            let p = net.param_count();
            let (dw, dv) = net.layer_sets();
            let theta = net.flatten();
            let reference = start.flatten();
            let err_with = |set: &IndexSet| -> Result<f64> {
                let mut probe = net.clone();
                probe.set_flat(&ablate(&theta, &reference, set))?;
                Ok(1.0 - probe.accuracy(test_set))
            };
            debug_assert_eq!(dw.dim(), p);
            Ok(SweepRow {
                lambda,
                init_mi_w: start.w.iter().map(|a| a * a).sum(),
                init_mi_v: start.v.iter().map(|a| a * a).sum(),
                importances: imp,
                train_loss: *out.trajectory.last().unwrap_or(&f64::NAN),
                test_error: 1.0 - net.accuracy(test_set),
                test_error_ablate_w: err_with(&dw)?,
                test_error_ablate_v: err_with(&dv)?,
                epochs_run: out.epochs_run,
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("need at least two points".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("constant input has no rank correlation".into()));
    }
    Ok(num / (va * vb).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}
