//! Scalar helpers and the small dense linear algebra needed for the d×d
//! precision factors.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

/// Logistic sigmoid, branch form so neither side overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn determinant(m: ArrayView2<f64>) -> f64 {
    to_nalgebra(m).determinant()
}

/// Inverse of a square matrix, `None` when LU reports it singular.
pub fn inverse(m: ArrayView2<f64>) -> Option<Array2<f64>> {
    to_nalgebra(m).try_inverse().map(|inv| from_nalgebra(&inv))
}

pub fn trace(m: ArrayView2<f64>) -> f64 {
    m.diag().sum()
}

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix, sorted
/// by descending eigenvalue.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = to_nalgebra(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((m.nrows(), n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}
