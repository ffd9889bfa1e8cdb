//! One-hidden-layer ReLU network `f(x) = V relu(W x)` with analytic
//! gradients and a Gauss-Newton Hessian diagonal.

use nalgebra::{DMatrix, DVector};

use super::data::ClassifDataset;
use crate::error::{Error, Result};
use crate::importance::IndexSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy.
    CrossEntropy,
    /// `0.5 ||f(x) - onehot(y)||^2`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// Input layer, `m x d`.
    pub w: DMatrix<f64>,
    /// Output layer, `K x m`.
    pub v: DMatrix<f64>,
    pub lambda_scale: f64,
    /// `(lambda W_init, V_init / lambda)` for the recorded base initialization.
    pub init_w: DMatrix<f64>,
    pub init_v: DMatrix<f64>,
}

/// Gradient (or any per-parameter quantity) split by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LayerPair {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = row_major(&self.w);
        out.extend(row_major(&self.v));
        out
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Cached forward pass over a batch.
pub(crate) struct Forward {
    pub pre: DMatrix<f64>,
    pub hidden: DMatrix<f64>,
    pub out: DMatrix<f64>,
}

impl TwoLayerNet {
    /// He-normal initialization: `W ~ N(0, 2/d)`, `V ~ N(0, 2/m)`.
    pub fn he_init(m: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        if m == 0 || d == 0 || k == 0 {
            return Err(Error::OutOfRange("network dimensions must be positive".into()));
        }
        let mut r = rng::stream(seed, 0);
        let ws = (2.0 / d as f64).sqrt();
        let vs = (2.0 / m as f64).sqrt();
        let wv = rng::normal_vec(&mut r, m * d, ws);
        let vv = rng::normal_vec(&mut r, k * m, vs);
        let w = DMatrix::from_row_slice(m, d, &wv);
        let v = DMatrix::from_row_slice(k, m, &vv);
        Ok(Self {
            init_w: w.clone(),
            init_v: v.clone(),
            w,
            v,
            lambda_scale: 1.0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.v.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.v.len()
    }

    /// `(Delta_W, Delta_V)` over the flattened parameter vector.
    pub fn layer_sets(&self) -> (IndexSet, IndexSet) {
        let p = self.param_count();
        let nw = self.w.len();
        (
            IndexSet::range(0, nw, p).expect("valid range"),
            IndexSet::range(nw, p, p).expect("valid range"),
        )
    }

    /// `W` row-major followed by `V` row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = row_major(&self.w);
        out.extend(row_major(&self.v));
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let nw = self.w.len();
        self.w = DMatrix::from_row_slice(self.w.nrows(), self.w.ncols(), &theta[..nw]);
        self.v = DMatrix::from_row_slice(self.v.nrows(), self.v.ncols(), &theta[nw..]);
        Ok(())
    }

    pub fn init_flat(&self) -> Vec<f64> {
        let mut out = row_major(&self.init_w);
        out.extend(row_major(&self.init_v));
        out
    }

    /// Copy positioned at its own initialization.
    pub fn at_init(&self) -> TwoLayerNet {
        TwoLayerNet {
            w: self.init_w.clone(),
            v: self.init_v.clone(),
            ..self.clone()
        }
    }

    /// `(lambda W, V / lambda)`, with the init snapshot rescaled alike.
    pub fn lambda_rescale(&self, lambda: f64) -> Result<TwoLayerNet> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::OutOfRange(format!("lambda must be positive, got {lambda}")));
        }
        Ok(TwoLayerNet {
            w: &self.w * lambda,
            v: &self.v / lambda,
            lambda_scale: self.lambda_scale * lambda,
            init_w: &self.init_w * lambda,
            init_v: &self.init_v / lambda,
        })
    }

    pub(crate) fn forward_batch(&self, x: &DMatrix<f64>) -> Forward {
        let pre = x * self.w.transpose();
        let hidden = pre.map(|z| z.max(0.0));
        let out = &hidden * self.v.transpose();
        Forward { pre, hidden, out }
    }

    /// Outputs for each row of `x` (`n x K`).
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_batch(x).out
    }

    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        let h = (&self.w * DVector::from_column_slice(x)).map(|z| z.max(0.0));
        &self.v * h
    }

    pub fn loss(&self, data: &ClassifDataset, kind: LossKind) -> f64 {
        let f = self.forward_batch(&data.inputs);
        mean_loss(&f.out, &data.labels, kind)
    }

    pub fn accuracy(&self, data: &ClassifDataset) -> f64 {
        let out = self.predict(&data.inputs);
        accuracy_of(&out, &data.labels)
    }

    /// Loss and gradient of the mean loss over `data`.
    pub fn loss_and_grad(&self, data: &ClassifDataset, kind: LossKind) -> (f64, LayerPair) {
        self.loss_and_grad_rows(&data.inputs, &data.labels, kind)
    }

    pub(crate) fn loss_and_grad_rows(
        &self,
        x: &DMatrix<f64>,
        labels: &[usize],
        kind: LossKind,
    ) -> (f64, LayerPair) {
        let n = x.nrows() as f64;
        let f = self.forward_batch(x);
        let loss = mean_loss(&f.out, labels, kind);
        let mut dout = output_residual(&f.out, labels, kind);
        dout /= n;
        let gv = dout.transpose() * &f.hidden;
        let mut dpre = dout * &self.v;
        dpre.zip_apply(&f.pre, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let gw = dpre.transpose() * x;
        (loss, LayerPair { w: gw, v: gv })
    }

    /// Gauss-Newton diagonal of the mean loss: for each parameter,
    /// `mean_n J_n^T H_n J_n` with `J_n` the output Jacobian column and `H_n`
    /// the loss Hessian in output space. The ReLU second-derivative term is
    /// dropped, so away from kinks this equals the exact Hessian diagonal.
    pub fn gauss_newton_diag(&self, data: &ClassifDataset, kind: LossKind) -> LayerPair {
        let x = &data.inputs;
        let n = x.nrows() as f64;
        let f = self.forward_batch(x);
        let v2 = self.v.map(|a| a * a);
        let h2 = f.hidden.map(|a| a * a);
        let x2 = x.map(|a| a * a);
        let (q, out_curv) = match kind {
            LossKind::CrossEntropy => {
                let p = softmax_rows(&f.out);
                // q_nj = v_j^T (diag(p) - p p^T) v_j
                let pv = &p * &self.v;
                let mut q = &p * &v2;
                q.zip_apply(&pv, |a, b| *a -= b * b);
                (q, p.map(|a| a * (1.0 - a)))
            }
            LossKind::Quadratic => {
                let col: Vec<f64> = (0..self.hidden()).map(|j| v2.column(j).sum()).collect();
                let q = DMatrix::from_fn(x.nrows(), self.hidden(), |_, j| col[j]);
                (q, DMatrix::from_element(x.nrows(), self.outputs(), 1.0))
            }
        };
        let mut qm = q;
        qm.zip_apply(&f.pre, |a, z| {
            if z <= 0.0 {
                *a = 0.0
            }
        });
        let gw = qm.transpose() * x2 / n;
        let gv = out_curv.transpose() * h2 / n;
        LayerPair { w: gw, v: gv }
    }
}

pub(crate) fn softmax_rows(out: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = out.clone();
    for mut row in p.row_iter_mut() {
        let mx = row.max();
        row.apply(|z| *z = (*z - mx).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

fn mean_loss(out: &DMatrix<f64>, labels: &[usize], kind: LossKind) -> f64 {
    let n = out.nrows() as f64;
    let total: f64 = match kind {
        LossKind::CrossEntropy => out
            .row_iter()
            .zip(labels)
            .map(|(row, &y)| {
                let mx = row.max();
                let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .sum(),
        LossKind::Quadratic => out
            .row_iter()
            .zip(labels)
            .map(|(row, &y)| {
                row.iter()
                    .enumerate()
                    .map(|(k, z)| {
                        let t = if k == y { 1.0 } else { 0.0 };
                        0.5 * (z - t) * (z - t)
                    })
                    .sum::<f64>()
            })
            .sum(),
    };
    total / n
}

/// Derivative of the per-example loss with respect to the outputs.
fn output_residual(out: &DMatrix<f64>, labels: &[usize], kind: LossKind) -> DMatrix<f64> {
    let mut r = match kind {
        LossKind::CrossEntropy => softmax_rows(out),
        LossKind::Quadratic => out.clone(),
    };
    for (i, &y) in labels.iter().enumerate() {
        r[(i, y)] -= 1.0;
    }
    r
}

pub(crate) fn accuracy_of(out: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = out
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// First index of the maximum.
fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
