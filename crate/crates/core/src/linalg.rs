//! Small dense linear-algebra helpers shared by the graph diagnostics and the
//! observers.

use nalgebra::{DMatrix, DVector};

/// Column-stacking vectorisation: column 1 first, then column 2, ...
///
/// The order is part of the log format and must not change.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores matrices column-major, so the raw slice is already vec(m).
    DVector::from_column_slice(m.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eig_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|z| z.re).collect()
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number estimate from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&DMatrix::zeros(3, 2)), DVector::zeros(6));
    }

    #[test]
    fn vec_norm_is_frobenius() {
        let m = DMatrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) as f64).sin());
        let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((vec(&m).norm() - frob).abs() < 1e-14);
    }

    #[test]
    fn kron_of_identity_blocks() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&a, &DMatrix::identity(2, 2));
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(0, 1)], 0.0);
    }
}
