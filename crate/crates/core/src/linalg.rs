//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `a z = b` for symmetric positive definite `a`.
///
/// Falls back to a jittered factorization (`1e-12 * trace / n` on the
/// diagonal) when the plain Cholesky fails, and rejects systems whose
/// condition estimate from the factor diagonal exceeds [`MAX_CONDITION`].
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let (chol, limit) = match a.clone().cholesky() {
        Some(c) => (c, MAX_CONDITION),
        None => {
            let jitter = 1e-12 * a.trace() / n as f64;
            let mut aj = a.clone();
            for i in 0..n {
                aj[(i, i)] += jitter;
            }
            let c = aj
                .cholesky()
                .ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
            // the jitter floors the smallest pivot, so the estimate of a
            // singular matrix saturates just below 1e12
            (c, MAX_CONDITION * 1e-2)
        }
    };
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let cond = (hi / lo).powi(2);
    if !cond.is_finite() || cond > limit {
        return Err(Error::Singular(format!("condition estimate {cond:e}")));
    }
    Ok(chol.solve(b))
}

/// Largest squared singular value of `x` by power iteration on `x^T x`.
pub fn spectral_norm_sq(x: &DMatrix<f64>, iters: usize) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start
    let mut v = DVector::from_fn(p, |i, _| 1.0 + (i as f64 * 0.618_033_988_749).fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = x.tr_mul(&(x * &v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw;
        v = w / nw;
    }
    est
}

/// Singular values, descending.
pub fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = x.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_svd() {
        let x = DMatrix::from_row_slice(3, 4, &[
            1.0, 2.0, 0.0, -1.0, //
            0.5, -1.0, 3.0, 2.0, //
            2.0, 0.0, 1.0, 1.0,
        ]);
        let s = singular_values(&x);
        assert!((spectral_norm_sq(&x, 200) - s[0] * s[0]).abs() < 1e-9);
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_solve(&a, &DVector::from_vec(vec![1.0, 1.0])), Err(Error::Singular(_))));
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let z = spd_solve(&b, &DVector::from_vec(vec![3.0, 3.0])).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 1.0).abs() < 1e-14);
    }
}
