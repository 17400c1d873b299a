//! Thin wrappers around the dense eigensolvers.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::C64;

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues ascending, columns
/// of the returned matrix are the matching eigenvectors.
pub fn hermitian_eigen(m: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("hermitian eigensolver: {e:?}")))?;
    let vals = evd.S().column_vector().iter().map(|v| v.re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn hermitian_eigenvalues(m: &Mat<C64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Solver(format!("hermitian eigensolver: {e:?}")))
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("symmetric eigensolver: {e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// Eigenvalues of a general complex matrix (unordered).
pub fn eigenvalues(m: &Mat<C64>) -> Result<Vec<C64>> {
    m.eigenvalues().map_err(|e| Error::Solver(format!("eigensolver: {e:?}")))
}

pub fn max_abs(m: &Mat<C64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

pub fn trace(m: &Mat<C64>) -> C64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn adjoint(m: &Mat<C64>) -> Mat<C64> {
    m.adjoint().to_owned()
}

pub fn hermiticity_error(m: &Mat<C64>) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Column-stacked vectorisation: `vec[i + d*j] = m[(i, j)]`.
pub fn vectorize(m: &Mat<C64>) -> Vec<C64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut v = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn unvectorize(v: &[C64], d: usize) -> Mat<C64> {
    assert_eq!(v.len(), d * d);
    Mat::from_fn(d, d, |i, j| v[i + d * j])
}
