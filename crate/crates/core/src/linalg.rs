//! Small dense helpers for working in the pi-weighted geometry.
//!
//! With `D = diag(sqrt(pi))`, the map `x -> D x` is an isometry from the
//! pi-weighted space onto plain Euclidean space. An operator `M` becomes
//! `D M D^-1` in that frame, so pi-self-adjoint operators turn symmetric and
//! pi-skew operators turn antisymmetric.

use nalgebra::{DMatrix, DVector};

pub fn inner(pi: &DVector<f64>, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
    pi.iter().zip(f.iter().zip(g.iter())).map(|(p, (a, b))| p * a * b).sum()
}

pub fn norm(pi: &DVector<f64>, f: &DVector<f64>) -> f64 {
    inner(pi, f, f).max(0.0).sqrt()
}

pub fn mean(pi: &DVector<f64>, f: &DVector<f64>) -> f64 {
    pi.dot(f)
}

/// `D M D^-1`.
pub fn to_sym_frame(m: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * sq[i] / sq[j])
}

/// `D^-1 M D`.
pub fn from_sym_frame(m: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * sq[j] / sq[i])
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Largest absolute entry of `m + m^T`, relative to `max(1, |m|_max)`.
pub fn skew_defect(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m + m.transpose()).amax() / scale
}
