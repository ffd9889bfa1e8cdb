//! The named experiments: schema, semantic checks, derived quantities and
//! the runner that turns a config into a table.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{optional, param, Diagnostic, ExperimentConfig, Kind, Param};
use super::table::{Cell, ResultTable};
use crate::cgmt::{self, EmpiricalSetup, PruneMethod};
use crate::error::{Error, Result};
use crate::importance::IndexSet;
use crate::l1_bias;
use crate::linreg::{self, BlockScalingSpec, DiagScaling, SparseScalingSetup};
use crate::ppls::{self, BoundKind};
use crate::rng::{self, child_seed};
use crate::shallow_net::{self as net, data, LossKind, MaskMode, TrainConfig, TwoLayerNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    AuxFig1,
    LinregInvariance,
    NetLambdaSweep,
    NetPruneRetrain,
    PplsBounds,
    L1Phase,
    PinvScaling,
}

const AUX: &[Param] = &[
    param("p", Kind::Int, "1000", "number of features"),
    param("kappa", Kind::Real, "5/3", "p/n; n is p/kappa rounded"),
    param("sigma", Kind::Real, "0.1", "label noise standard deviation"),
    param("lambdas", Kind::RealList, "[0.5, 1, 5]", "head-block scalings, one cell each"),
    param("head_fraction", Kind::Real, "0.1", "fraction of leading coordinates scaled by lambda"),
    param(
        "sparsity_fractions",
        Kind::RealList,
        "[0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]",
        "kept fractions s/p",
    ),
    param("mc_samples", Kind::Int, "2000", "draws of the auxiliary vector per cell"),
    param("trials", Kind::Int, "50", "sampled datasets per cell"),
];

const INVARIANCE: &[Param] = &[
    param("p", Kind::Int, "50", "number of features"),
    param("n_values", Kind::IntList, "[25, 100]", "sample sizes; n >= p is the under-parameterized control"),
    param("lambdas", Kind::RealList, "[0.5, 1, 2, 5]", "head-block scalings"),
    param("head_fraction", Kind::Real, "0.1", "fraction of leading coordinates scaled"),
    param("sigma", Kind::Real, "0.1", "label noise standard deviation"),
];

const PINV: &[Param] = &[
    param("n", Kind::Int, "3", "rows of the random design"),
    param("p", Kind::Int, "6", "columns of the random design (p > n)"),
    param("lambdas", Kind::RealList, "[0.25, 0.5, 1, 2, 4, 8, 1000000]", "scalings of the first feature"),
    param("risk_p", Kind::Int, "40", "features in the sparse-scaling risk curve"),
    param("risk_n", Kind::Int, "20", "samples in the sparse-scaling risk curve"),
    param("risk_support", Kind::Int, "5", "support size of the ground truth, also the scaled set"),
    param("risk_lambdas", Kind::RealList, "[0.5, 1, 2, 4, 8, 32, 128]", "scalings of the support features"),
];

const NET_DATA: &[Param] = &[
    param("d", Kind::Int, "32", "mixture input dimension"),
    param("classes", Kind::Int, "4", "number of classes"),
    param("hidden", Kind::Int, "256", "hidden width m"),
    param("n_train", Kind::Int, "512", "mixture training examples"),
    param("n_test", Kind::Int, "512", "mixture test examples"),
    param("separation", Kind::Real, "1.0", "std of the class means"),
    param("noise", Kind::Real, "1.5", "within-class std"),
    optional("train_images", Kind::Str, "IDX image file; replaces the mixture when all four IDX keys are set"),
    optional("train_labels", Kind::Str, "IDX label file"),
    optional("test_images", Kind::Str, "IDX image file"),
    optional("test_labels", Kind::Str, "IDX label file"),
    param("epochs", Kind::Int, "150", "epoch cap"),
    param("batch_size", Kind::Int, "0", "mini-batch size, 0 for full batch"),
    param("learning_rate", Kind::Real, "0.05", "gradient step"),
    param("loss", Kind::Str, "cross_entropy", "cross_entropy or quadratic"),
    param("interpolation_threshold", Kind::Real, "0.001", "stop once train accuracy is 1 and loss is below this"),
];

const SWEEP: &[Param] = &[
    param("lambdas", Kind::RealList, "[0.25, 0.5, 1, 2, 4]", "sorted initialization scalings"),
    param("replicates", Kind::Int, "1", "independent data and init draws"),
];

const PRUNE: &[Param] = &[
    param("lambdas", Kind::RealList, "[0.25, 1, 4]", "initialization scalings"),
    param("fractions", Kind::RealList, "[0.01, 0.05, 0.1]", "kept fractions"),
    param("methods", Kind::StrList, "[MP, HP]", "MP (magnitude) and/or HP (Hessian)"),
    param("modes", Kind::StrList, "[global]", "global and/or layerwise"),
];

const PPLS: &[Param] = &[
    param("n", Kind::Int, "20", "samples"),
    param("block_dims", Kind::IntList, "[40, 40]", "block widths, each >= n"),
    param("block_scales", Kind::RealList, "[]", "per-block design scale, empty for none"),
    param("instances", Kind::Int, "20", "random instances for the trajectory bounds"),
    param("max_iters", Kind::Int, "1000000", "gradient steps cap"),
    param("n1_block_dims", Kind::IntList, "[2, 2, 2]", "block widths of the single-sample instances"),
    param("n1_instances", Kind::Int, "20", "single-sample instances for the converse checks"),
];

const L1: &[Param] = &[
    param("p", Kind::Int, "200", "ambient dimension"),
    param("s", Kind::Int, "5", "sparsity"),
    param("spikes", Kind::RealList, "[1, 8]", "spike sizes R"),
    param(
        "n_grid",
        Kind::IntList,
        "[5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70]",
        "sample sizes",
    ),
    param("trials", Kind::Int, "50", "instances per grid point"),
    param("include_bound_point", Kind::Int, "1", "1 adds ceil(width bound) + 10 to each curve"),
];

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::AuxFig1,
        Experiment::LinregInvariance,
        Experiment::NetLambdaSweep,
        Experiment::NetPruneRetrain,
        Experiment::PplsBounds,
        Experiment::L1Phase,
        Experiment::PinvScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AuxFig1 => "aux-fig1",
            Experiment::LinregInvariance => "linreg-invariance",
            Experiment::NetLambdaSweep => "net-lambda-sweep",
            Experiment::NetPruneRetrain => "net-prune-retrain",
            Experiment::PplsBounds => "ppls-bounds",
            Experiment::L1Phase => "l1-phase",
            Experiment::PinvScaling => "pinv-scaling",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn schema(self) -> &'static [Param] {
        match self {
            Experiment::AuxFig1 => AUX,
            Experiment::LinregInvariance => INVARIANCE,
            Experiment::NetLambdaSweep | Experiment::NetPruneRetrain => NET_DATA,
            Experiment::PplsBounds => PPLS,
            Experiment::L1Phase => L1,
            Experiment::PinvScaling => PINV,
        }
    }

    /// Keys beyond the shared data/training block of the two net experiments.
    pub fn extra_schema(self) -> &'static [Param] {
        match self {
            Experiment::NetLambdaSweep => SWEEP,
            Experiment::NetPruneRetrain => PRUNE,
            _ => &[],
        }
    }

    pub fn full_schema(self) -> Vec<Param> {
        self.schema().iter().chain(self.extra_schema()).copied().collect()
    }

    /// Semantic checks beyond types.
    pub fn check(self, cfg: &ExperimentConfig) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let mut need = |ok: bool, key: &str, msg: &str| {
            if !ok {
                d.push(Diagnostic::for_key(key, msg));
            }
        };
        let positive_list = |key: &str| {
            let v = cfg.reals(key);
            !v.is_empty() && v.iter().all(|x| *x > 0.0)
        };
        match self {
            Experiment::AuxFig1 => {
                need(cfg.int("p") >= 2, "p", "p must be >= 2");
                need(cfg.real("kappa") > 1.0, "kappa", "kappa must be > 1");
                need(cfg.real("sigma") >= 0.0, "sigma", "sigma must be ≥ 0");
                need(positive_list("lambdas"), "lambdas", "lambdas must be a nonempty list of positive numbers");
                let hf = cfg.real("head_fraction");
                need(hf > 0.0 && hf <= 1.0, "head_fraction", "head_fraction must be in (0, 1]");
                let fr = cfg.reals("sparsity_fractions");
                need(
                    !fr.is_empty() && fr.iter().all(|f| *f > 0.0 && *f <= 1.0),
                    "sparsity_fractions",
                    "sparsity fractions must lie in (0, 1]",
                );
                need(cfg.int("mc_samples") >= 1, "mc_samples", "mc_samples must be >= 1");
                need(cfg.int("trials") >= 1, "trials", "trials must be >= 1");
                if cfg.int("p") >= 2 && cfg.real("kappa") > 1.0 {
                    let n = aux_n(cfg);
                    need(n >= 1 && n < cfg.usize("p"), "kappa", "p/kappa must round to an n in [1, p)");
                }
            }
            Experiment::LinregInvariance => {
                need(cfg.int("p") >= 1, "p", "p must be >= 1");
                let ns = cfg.ints("n_values");
                need(!ns.is_empty() && ns.iter().all(|n| *n >= 1), "n_values", "n_values must be positive");
                need(positive_list("lambdas"), "lambdas", "lambdas must be a nonempty list of positive numbers");
                need(cfg.real("sigma") >= 0.0, "sigma", "sigma must be ≥ 0");
                let hf = cfg.real("head_fraction");
                need(hf > 0.0 && hf <= 1.0, "head_fraction", "head_fraction must be in (0, 1]");
            }
            Experiment::PinvScaling => {
                need(cfg.int("n") >= 1 && cfg.int("p") > cfg.int("n"), "p", "needs 1 <= n < p");
                need(positive_list("lambdas"), "lambdas", "lambdas must be a nonempty list of positive numbers");
                need(positive_list("risk_lambdas"), "risk_lambdas", "risk_lambdas must be positive");
                let k = cfg.int("risk_support");
                need(
                    k >= 1 && k < cfg.int("risk_n") && cfg.int("risk_n") < cfg.int("risk_p"),
                    "risk_support",
                    "needs 1 <= risk_support < risk_n < risk_p",
                );
            }
            Experiment::NetLambdaSweep | Experiment::NetPruneRetrain => {
                for k in ["d", "classes", "hidden", "n_train", "n_test"] {
                    need(cfg.int(k) >= 1, k, "must be >= 1");
                }
                need(cfg.int("classes") >= 2, "classes", "needs at least two classes");
                need(cfg.real("noise") >= 0.0, "noise", "noise must be ≥ 0");
                need(cfg.int("epochs") >= 1, "epochs", "epochs must be >= 1");
                need(cfg.int("batch_size") >= 0, "batch_size", "batch_size must be >= 0");
                need(cfg.real("learning_rate") > 0.0, "learning_rate", "learning_rate must be > 0");
                need(
                    cfg.real("interpolation_threshold") >= 0.0,
                    "interpolation_threshold",
                    "interpolation_threshold must be ≥ 0",
                );
                need(
                    loss_kind(cfg).is_some(),
                    "loss",
                    "loss must be cross_entropy or quadratic",
                );
                let idx = IDX_KEYS.iter().filter(|k| cfg.string(k).is_some()).count();
                need(idx == 0 || idx == 4, "train_images", "set all four IDX file keys or none");
                need(positive_list("lambdas"), "lambdas", "lambdas must be a nonempty list of positive numbers");
                if self == Experiment::NetLambdaSweep {
                    let l = cfg.reals("lambdas");
                    need(l.windows(2).all(|w| w[0] <= w[1]), "lambdas", "lambdas must be sorted ascending");
                    need(cfg.int("replicates") >= 1, "replicates", "replicates must be >= 1");
                } else {
                    let f = cfg.reals("fractions");
                    need(
                        !f.is_empty() && f.iter().all(|x| *x > 0.0 && *x <= 1.0),
                        "fractions",
                        "fractions must lie in (0, 1]",
                    );
                    let m = cfg.strings("methods");
                    need(
                        !m.is_empty() && m.iter().all(|x| parse_method(x).is_some()),
                        "methods",
                        "methods must be MP or HP",
                    );
                    let md = cfg.strings("modes");
                    need(
                        !md.is_empty() && md.iter().all(|x| parse_mode(x).is_some()),
                        "modes",
                        "modes must be global or layerwise",
                    );
                }
            }
            Experiment::PplsBounds => {
                let n = cfg.int("n");
                need(n >= 1, "n", "n must be >= 1");
                let dims = cfg.ints("block_dims");
                need(
                    !dims.is_empty() && dims.iter().all(|p| *p >= n),
                    "block_dims",
                    "every block width must be >= n",
                );
                let sc = cfg.reals("block_scales");
                need(
                    sc.is_empty() || (sc.len() == dims.len() && sc.iter().all(|c| *c > 0.0)),
                    "block_scales",
                    "block_scales must be empty or one positive scale per block",
                );
                let n1 = cfg.ints("n1_block_dims");
                need(!n1.is_empty() && n1.iter().all(|p| *p >= 1), "n1_block_dims", "widths must be >= 1");
                need(cfg.int("instances") >= 0, "instances", "instances must be >= 0");
                need(cfg.int("n1_instances") >= 0, "n1_instances", "n1_instances must be >= 0");
                need(cfg.int("max_iters") >= 1, "max_iters", "max_iters must be >= 1");
            }
            Experiment::L1Phase => {
                let (p, s) = (cfg.int("p"), cfg.int("s"));
                need(s >= 1 && s <= p, "s", "needs 1 <= s <= p");
                let r = cfg.reals("spikes");
                need(!r.is_empty() && r.iter().all(|x| *x >= 1.0), "spikes", "spikes must be >= 1");
                let g = cfg.ints("n_grid");
                need(!g.is_empty() && g.iter().all(|n| *n >= 1 && *n <= p), "n_grid", "grid points must lie in [1, p]");
                need(cfg.int("trials") >= 1, "trials", "trials must be >= 1");
            }
        }
        d
    }

    /// Human-readable derived quantities for `validate`.
    pub fn derived(self, cfg: &ExperimentConfig) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Experiment::AuxFig1 => {
                let (p, n) = (cfg.usize("p"), aux_n(cfg));
                out.push(format!("n = {n} (p/n = {:.6})", p as f64 / n as f64));
                let head = BlockScalingSpec {
                    lambda: 1.0,
                    head_fraction: cfg.real("head_fraction"),
                }
                .head_len(p);
                out.push(format!("Lambda = diag(lambda on the first {head} coordinates, 1 elsewhere)"));
                let l = cfg.reals("lambdas");
                out.push(format!("{} run cells (lambda = {})", l.len(), join(&l)));
                out.push(format!(
                    "sparsities s = {}",
                    sparsities(cfg).iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
                ));
            }
            Experiment::LinregInvariance => {
                let p = cfg.int("p");
                for n in cfg.ints("n_values") {
                    let regime = if n >= p { "under-parameterized" } else { "over-parameterized" };
                    out.push(format!("n = {n}: {regime}"));
                }
                out.push(format!(
                    "{} run cells",
                    cfg.ints("n_values").len() * cfg.reals("lambdas").len()
                ));
            }
            Experiment::PinvScaling => {
                out.push(format!("{} first-entry cells", cfg.reals("lambdas").len()));
                out.push(format!("{} risk-curve cells", cfg.reals("risk_lambdas").len()));
            }
            Experiment::NetLambdaSweep | Experiment::NetPruneRetrain => {
                let source = if cfg.string("train_images").is_some() { "IDX files" } else { "Gaussian mixture" };
                out.push(format!("data source: {source}"));
                if source == "Gaussian mixture" {
                    let (d, k, m) = (cfg.usize("d"), cfg.usize("classes"), cfg.usize("hidden"));
                    out.push(format!("parameters (d + K) m = {}", (d + k) * m));
                }
                let cells = if self == Experiment::NetLambdaSweep {
                    cfg.reals("lambdas").len() * cfg.usize("replicates")
                } else {
                    cfg.reals("lambdas").len()
                        * cfg.reals("fractions").len()
                        * cfg.strings("methods").len()
                        * cfg.strings("modes").len()
                };
                out.push(format!("{cells} run cells"));
            }
            Experiment::PplsBounds => {
                let dims = cfg.ints("block_dims");
                out.push(format!("p = {}", dims.iter().sum::<i64>()));
                out.push(format!(
                    "{} trajectory instances, {} single-sample instances",
                    cfg.int("instances"),
                    cfg.int("n1_instances")
                ));
            }
            Experiment::L1Phase => {
                let (p, s) = (cfg.usize("p"), cfg.usize("s"));
                for r in cfg.reals("spikes") {
                    if let Ok(b) = l1_bias::width_bound_spike(p, s, r) {
                        out.push(format!("R = {r}: width bound {b:.4}, bound point n = {}", bound_point(b)));
                    }
                }
            }
        }
        out
    }

    pub fn run(self, cfg: &ExperimentConfig) -> Result<ResultTable> {
        let mut table = match self {
            Experiment::AuxFig1 => run_aux(cfg),
            Experiment::LinregInvariance => run_invariance(cfg),
            Experiment::PinvScaling => run_pinv(cfg),
            Experiment::NetLambdaSweep => run_sweep(cfg),
            Experiment::NetPruneRetrain => run_prune(cfg),
            Experiment::PplsBounds => run_ppls(cfg),
            Experiment::L1Phase => run_l1(cfg),
        }?;
        table.config_hash = cfg.hash();
        table.seed = cfg.seed;
        Ok(table)
    }
}

const IDX_KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn aux_n(cfg: &ExperimentConfig) -> usize {
    (cfg.int("p") as f64 / cfg.real("kappa")).round() as usize
}

fn sparsities(cfg: &ExperimentConfig) -> Vec<usize> {
    let p = cfg.usize("p");
    cfg.reals("sparsity_fractions")
        .iter()
        .map(|f| ((f * p as f64).round() as usize).clamp(1, p))
        .collect()
}

fn bound_point(b: f64) -> usize {
    b.ceil() as usize + 10
}

fn loss_kind(cfg: &ExperimentConfig) -> Option<LossKind> {
    match cfg.string("loss")? {
        "cross_entropy" => Some(LossKind::CrossEntropy),
        "quadratic" => Some(LossKind::Quadratic),
        _ => None,
    }
}

fn parse_method(s: &str) -> Option<PruneMethod> {
    match s {
        "MP" => Some(PruneMethod::Magnitude),
        "HP" => Some(PruneMethod::Hessian),
        _ => None,
    }
}

fn parse_mode(s: &str) -> Option<MaskMode> {
    match s {
        "global" => Some(MaskMode::Global),
        "layerwise" => Some(MaskMode::Layerwise),
        _ => None,
    }
}

fn mode_label(m: MaskMode) -> &'static str {
    match m {
        MaskMode::Global => "global",
        MaskMode::Layerwise => "layerwise",
    }
}

fn run_aux(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "aux-fig1",
        &[
            "lambda",
            "s_over_p",
            "s",
            "method",
            "predicted_loss",
            "predicted_se",
            "empirical_loss",
            "empirical_se",
        ],
    );
    let p = cfg.usize("p");
    let n = aux_n(cfg);
    let sigma = cfg.real("sigma");
    let theta_bar = linreg::decaying_ground_truth(p);
    let ss = sparsities(cfg);
    for (c, &lambda) in cfg.reals("lambdas").iter().enumerate() {
        let scaling = BlockScalingSpec {
            lambda,
            head_fraction: cfg.real("head_fraction"),
        }
        .build(p)?;
        let params = cgmt::solve_aux(p as f64 / n as f64, sigma, &scaling, &theta_bar)?;
        let pred = cgmt::predict_prune_curve(&params, &ss, cfg.usize("mc_samples"), child_seed(cfg.seed, 2 * c as u64))?;
        let setup = EmpiricalSetup {
            p,
            n,
            sigma,
            theta_bar: theta_bar.clone(),
            scaling,
        };
        let emp = cgmt::empirical_prune_curve(&setup, &ss, cfg.usize("trials"), child_seed(cfg.seed, 2 * c as u64 + 1))?;
        for (k, &s) in ss.iter().enumerate() {
            for m in [PruneMethod::Magnitude, PruneMethod::Hessian] {
                let (a, b) = (pred.get(k, m), emp.get(k, m));
                t.push(
                    c,
                    vec![
                        lambda.into(),
                        (s as f64 / p as f64).into(),
                        s.into(),
                        m.label().into(),
                        a.mean.into(),
                        a.std_err.into(),
                        b.mean.into(),
                        b.std_err.into(),
                    ],
                )?;
            }
        }
    }
    Ok(t)
}

fn run_invariance(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "linreg-invariance",
        &[
            "n",
            "lambda",
            "regime",
            "train_pred_gap",
            "effective_param_gap",
            "test_loss_unscaled",
            "test_loss_scaled",
        ],
    );
    let p = cfg.usize("p");
    let sigma = cfg.real("sigma");
    let theta_bar = linreg::decaying_ground_truth(p);
    let lambdas = cfg.reals("lambdas");
    let identity = DiagScaling::identity(p);
    for (j, &n) in cfg.ints("n_values").iter().enumerate() {
        let n = n as usize;
        let raw = linreg::generate_dataset(p, n, &theta_bar, sigma, &identity, child_seed(cfg.seed, j as u64))?;
        let theta = linreg::min_norm_solve(&raw.x, &raw.y)?;
        let fit = &raw.x * &theta;
        let base_loss = linreg::population_test_loss(theta.as_slice(), &theta_bar, &identity, sigma)?;
        for (k, &lambda) in lambdas.iter().enumerate() {
            let scaling = BlockScalingSpec {
                lambda,
                head_fraction: cfg.real("head_fraction"),
            }
            .build(p)?;
            let xs = DMatrix::from_fn(n, p, |i, c| raw.x[(i, c)] * scaling.diag()[c]);
            let ts = linreg::min_norm_solve(&xs, &raw.y)?;
            let fit_s = &xs * &ts;
            let eff = DVector::from_vec(scaling.apply(ts.as_slice()));
            let gap = (&fit_s - &fit).norm() / fit.norm().max(f64::MIN_POSITIVE);
            t.push(
                j * lambdas.len() + k,
                vec![
                    n.into(),
                    lambda.into(),
                    if n >= p { "under" } else { "over" }.into(),
                    gap.into(),
                    (eff - &theta).norm().into(),
                    base_loss.into(),
                    linreg::population_test_loss(ts.as_slice(), &theta_bar, &scaling, sigma)?.into(),
                ],
            )?;
        }
    }
    Ok(t)
}

fn run_pinv(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new("pinv-scaling", &["section", "lambda", "value"]);
    let (n, p) = (cfg.usize("n"), cfg.usize("p"));
    let mut r = rng::stream(cfg.seed, 0);
    let x = DMatrix::from_row_slice(n, p, &rng::normal_vec(&mut r, n * p, 1.0));
    let y = DVector::from_vec(rng::normal_vec(&mut r, n, 1.0));
    let mut cell = 0;
    for &lambda in &cfg.reals("lambdas") {
        let v = linreg::scaled_pinv_first_entry(&x, &y, lambda)?;
        t.push(cell, vec!["first_entry".into(), lambda.into(), v.into()])?;
        cell += 1;
    }
    let (rp, k) = (cfg.usize("risk_p"), cfg.usize("risk_support"));
    let amp = 1.0 / (k as f64).sqrt();
    let setup = SparseScalingSetup {
        p: rp,
        n: cfg.usize("risk_n"),
        theta_bar: (0..rp).map(|i| if i < k { amp } else { 0.0 }).collect(),
        delta: IndexSet::range(0, k, rp)?,
        seed: child_seed(cfg.seed, 1),
    };
    for (lambda, risk) in linreg::sparse_scaling_risk_curve(&setup, &cfg.reals("risk_lambdas"))? {
        t.push(cell, vec!["sparse_risk".into(), lambda.into(), risk.into()])?;
        cell += 1;
    }
    Ok(t)
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.usize("epochs"),
        batch_size: cfg.usize("batch_size"),
        learning_rate: cfg.real("learning_rate"),
        loss_kind: loss_kind(cfg).unwrap_or(LossKind::CrossEntropy),
        seed,
        interpolation_threshold: cfg.real("interpolation_threshold"),
    }
}

/// Train and test sets for replicate `r`: the mixture uses seed
/// `child_seed(seed, 2r)`; IDX files are the same for every replicate.
pub fn net_data(cfg: &ExperimentConfig, r: u64) -> Result<(data::ClassifDataset, data::ClassifDataset)> {
    let classes = cfg.usize("classes");
    if let [Some(ti), Some(tl), Some(vi), Some(vl)] = IDX_KEYS.map(|k| cfg.string(k)) {
        let train = data::load_idx(ti.as_ref(), tl.as_ref(), classes)?;
        let test = data::load_idx(vi.as_ref(), vl.as_ref(), classes)?;
        if train.dim() != test.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                got: test.dim(),
            });
        }
        return Ok((train, test));
    }
    let spec = data::MixtureSpec {
        d: cfg.usize("d"),
        classes,
        separation: cfg.real("separation"),
        noise: cfg.real("noise"),
    };
    data::gaussian_mixture(&spec, cfg.usize("n_train"), cfg.usize("n_test"), child_seed(cfg.seed, 2 * r))
}

/// He initialization for replicate `r` from `child_seed(seed, 2r + 1)`.
pub fn net_init(cfg: &ExperimentConfig, r: u64, input_dim: usize) -> Result<TwoLayerNet> {
    TwoLayerNet::he_init(cfg.usize("hidden"), input_dim, cfg.usize("classes"), child_seed(cfg.seed, 2 * r + 1))
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "net-lambda-sweep",
        &[
            "replicate",
            "lambda",
            "MI_W",
            "MI_V",
            "HI_W",
            "HI_V",
            "NI_W",
            "NI_V",
            "test_err_ablate_W",
            "test_err_ablate_V",
            "init_MI_W",
            "init_MI_V",
            "train_loss",
            "test_err",
            "epochs",
        ],
    );
    let lambdas = cfg.reals("lambdas");
    for r in 0..cfg.usize("replicates") {
        let (train, test) = net_data(cfg, r as u64)?;
        let base = net_init(cfg, r as u64, train.dim())?;
        let tc = train_config(cfg, child_seed(cfg.seed, 2 * r as u64 + 1));
        let rows = net::ni_vs_lambda_sweep(&base, &lambdas, &train, &test, &tc)?;
        for (k, row) in rows.iter().enumerate() {
            let i = &row.importances;
            t.push(
                r * lambdas.len() + k,
                vec![
                    r.into(),
                    row.lambda.into(),
                    i.mi_w.into(),
                    i.mi_v.into(),
                    i.hi_w.into(),
                    i.hi_v.into(),
                    i.ni_w.into(),
                    i.ni_v.into(),
                    row.test_error_ablate_w.into(),
                    row.test_error_ablate_v.into(),
                    row.init_mi_w.into(),
                    row.init_mi_v.into(),
                    row.train_loss.into(),
                    row.test_error.into(),
                    row.epochs_run.into(),
                ],
            )?;
        }
    }
    Ok(t)
}

fn run_prune(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "net-prune-retrain",
        &[
            "lambda",
            "method",
            "mode",
            "fraction",
            "test_accuracy",
            "dense_test_accuracy",
            "surviving_fraction_W",
            "surviving_fraction_V",
            "dead_W",
            "dead_V",
        ],
    );
    let (train, test) = net_data(cfg, 0)?;
    let base = net_init(cfg, 0, train.dim())?;
    let tc = train_config(cfg, child_seed(cfg.seed, 1));
    let methods: Vec<PruneMethod> = cfg.strings("methods").iter().filter_map(|m| parse_method(m)).collect();
    let modes: Vec<MaskMode> = cfg.strings("modes").iter().filter_map(|m| parse_mode(m)).collect();
    let fractions = cfg.reals("fractions");
    let per_lambda: Result<Vec<Vec<net::PruneRetrainRecord>>> = cfg
        .reals("lambdas")
        .par_iter()
        .map(|&lambda| {
            let start = base.at_init().lambda_rescale(lambda)?;
            let trained = net::train(&start, &train, &tc)?.net;
            let mut out = Vec::new();
            for &m in &methods {
                for &mode in &modes {
                    for &f in &fractions {
                        out.push(net::retrain_pruned(&trained, &train, &test, &tc, m, f, mode)?);
                    }
                }
            }
            Ok(out)
        })
        .collect();
    for (cell, rec) in per_lambda?.into_iter().flatten().enumerate() {
        t.push(
            cell,
            vec![
                rec.lambda.into(),
                rec.method.label().into(),
                mode_label(rec.mode).into(),
                rec.fraction.into(),
                rec.test_accuracy.into(),
                rec.dense_test_accuracy.into(),
                rec.surviving_fraction_w.into(),
                rec.surviving_fraction_v.into(),
                rec.dead_w.into(),
                rec.dead_v.into(),
            ],
        )?;
    }
    Ok(t)
}

fn run_ppls(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "ppls-bounds",
        &[
            "family",
            "instance",
            "n",
            "blocks",
            "iterations",
            "converged",
            "checks",
            "violations",
            "margin_loss_decay",
            "margin_distance",
            "margin_ni_upper",
            "margin_complement_lower",
            "converse_general_ok",
            "converse_complement_stated_ok",
            "converse_complement_exact_ok",
        ],
    );
    let dims: Vec<usize> = cfg.ints("block_dims").iter().map(|&d| d as usize).collect();
    let n1_dims: Vec<usize> = cfg.ints("n1_block_dims").iter().map(|&d| d as usize).collect();
    let scales = cfg.reals("block_scales");
    let scales = (!scales.is_empty()).then_some(scales.as_slice());
    let max_iters = cfg.usize("max_iters");
    let families = [
        ("theorem", cfg.usize("n"), &dims, scales, cfg.usize("instances")),
        ("converse_n1", 1, &n1_dims, None, cfg.usize("n1_instances")),
    ];
    let mut cell = 0;
    for (f, (family, n, dims, scales, count)) in families.into_iter().enumerate() {
        let fam_seed = child_seed(cfg.seed, f as u64);
        let rows: Result<Vec<Vec<Cell>>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let inst = ppls::random_instance(n, dims, child_seed(fam_seed, i as u64), scales)?;
                let traj = ppls::run_gd(&inst.blocks, &inst.y, &inst.theta0, None, max_iters)?;
                let rep = ppls::check_theorem_bounds(&traj, &inst.blocks);
                let tight = ppls::check_tightness(&inst.blocks, &inst.y, &inst.theta0, n == 1)?;
                let margin = |k: BoundKind| {
                    rep.min_margin
                        .iter()
                        .find(|(kind, _)| *kind == k)
                        .map_or(Cell::Missing, |(_, m)| Cell::Real(*m))
                };
                Ok(vec![
                    family.into(),
                    i.into(),
                    n.into(),
                    dims.len().into(),
                    (traj.records.len() - 1).into(),
                    traj.converged.into(),
                    rep.checks.into(),
                    rep.violations.len().into(),
                    margin(BoundKind::LossDecay),
                    margin(BoundKind::Distance),
                    margin(BoundKind::NiUpper),
                    margin(BoundKind::ComplementLower),
                    tight.general_ok().into(),
                    tight.complement_stated_ok().into(),
                    tight.complement_exact_ok().into(),
                ])
            })
            .collect();
        for row in rows? {
            t.push(cell, row)?;
            cell += 1;
        }
    }
    Ok(t)
}

fn run_l1(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut t = ResultTable::new(
        "l1-phase",
        &["R", "n", "successes", "trials", "success_rate", "width_bound", "bound_point"],
    );
    let (p, s) = (cfg.usize("p"), cfg.usize("s"));
    let mut cell = 0;
    for (k, &r) in cfg.reals("spikes").iter().enumerate() {
        let bound = l1_bias::width_bound_spike(p, s, r)?;
        let bp = bound_point(bound);
        let mut grid: Vec<usize> = cfg.ints("n_grid").iter().map(|&n| n as usize).collect();
        if cfg.int("include_bound_point") != 0 && bp <= p {
            grid.push(bp);
        }
        grid.sort_unstable();
        grid.dedup();
        let curve = l1_bias::phase_curve(p, s, r, &grid, cfg.usize("trials"), child_seed(cfg.seed, k as u64))?;
        for pt in curve {
            t.push(
                cell,
                vec![
                    r.into(),
                    pt.n.into(),
                    pt.successes.into(),
                    pt.trials.into(),
                    pt.rate.into(),
                    bound.into(),
                    (pt.n == bp).into(),
                ],
            )?;
            cell += 1;
        }
    }
    Ok(t)
}
