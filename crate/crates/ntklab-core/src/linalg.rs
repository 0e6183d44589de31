//! Dense symmetric eigensolves and spectral norms.
//!
//! Eigendecompositions go through nalgebra's symmetric solver (dense,
//! deterministic). Extremal singular values are computed by power iteration
//! on the squared operator, which is cheap and accurate for the well
//! separated extremes we need.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

/// Dense eigensolves are capped at this order; the harness is a desk-scale
/// tool and anything larger signals a misconfiguration.
pub const EIGEN_CAP: usize = 4096;

fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// All eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if n > EIGEN_CAP {
        return Err(Error::EigenCap { n, cap: EIGEN_CAP });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric eigensolve input"));
    }
    let m = to_dmatrix(a);
    let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(Array1::from_vec(vals))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(sym_eigenvalues(a)?[0])
}

/// Spectral norm (largest |eigenvalue|) of a symmetric matrix by power
/// iteration on A^2. The deterministic start vector plus a fixed iteration
/// budget keeps results schedule-independent.
pub fn spectral_norm_sym(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "spectral_norm_sym needs a square matrix");
    if n == 0 {
        return 0.0;
    }
    // Deterministic start with a mild sweep so we never begin orthogonal to
    // the top eigenvector.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.5 * ((i as f64) * 0.7).sin());
    let mut norm = (v.dot(&v)).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut est = 0.0_f64;
    for _ in 0..300 {
        let w = a.dot(&a.dot(&v)); // A^2 v
        norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let new_est = w.dot(&v).abs().sqrt(); // (v' A^2 v)^{1/2}
        v = w / norm;
        if (new_est - est).abs() <= 1e-12 * new_est.max(1e-300) {
            return new_est;
        }
        est = new_est;
    }
    est
}

/// Largest singular value of a rectangular matrix, via the smaller Gram
/// matrix when that is cheap, otherwise by power iteration on `A^T A`.
pub fn spectral_norm_rect(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, d) = (a.nrows(), a.ncols());
    let (gram, k) = if d <= n { (a.t().dot(&a), d) } else { (a.dot(&a.t()), n) };
    if k <= 512 {
        let eigs = sym_eigenvalues(gram.view())?;
        Ok(eigs[k - 1].max(0.0).sqrt())
    } else {
        Ok(spectral_norm_sym(gram.view()).max(0.0).sqrt())
    }
}

/// Frobenius norm.
pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact product of two 0/1 indicator matrices, accumulated in f32.
///
/// Counts are integers bounded by the inner dimension (far below 2^24), so
/// the f32 accumulation is exact while running about twice as fast as f64.
pub fn count_product(s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Array2<f64> {
    let sf = s.mapv(|x| x as f32);
    let tf = t.mapv(|x| x as f32);
    sf.dot(&tf.t()).mapv(f64::from)
}
