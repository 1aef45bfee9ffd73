//! Dense vector helpers and the verification-only eigen solver.

use nalgebra::{DMatrix, SymmetricEigen};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Scales `v` to unit length in place and returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Smallest eigenvalue and a matching unit eigenvector of a symmetric matrix.
pub fn min_eigenpair(h: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let eig = SymmetricEigen::new(h.clone());
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("empty matrix");
    (val, eig.eigenvectors.column(idx).iter().copied().collect())
}

pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn spectral_norm_sym(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn mat_vec(h: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| h[(i, j)] * v[j]).sum()).collect()
}
