//! Operator algebra on truncated composite Hilbert spaces.
//!
//! Subsystems are ordered cavity first, then the emitters, then the witness
//! qubit when one is modelled. Subsystem 0 carries the slowest-varying index
//! of the composite basis, so `|i0, i1, ..⟩` sits at
//! `((i0 * d1 + i1) * d2 + i2) ...`.
//!
//! Operators are sparse; density matrices are dense.

use faer::Mat;

use crate::dynamics::PhotonDistribution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::C64;

/// Default cap on the total composite dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

const HERMITIAN_TOL: f64 = 1e-12;
const STATE_TRACE_TOL: f64 = 1e-9;
const STATE_HERMITIAN_TOL: f64 = 1e-10;
const STATE_POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositeSpace {
    dims: Vec<usize>,
}

impl CompositeSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        Self::with_cap(dims, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(dims: Vec<usize>, cap: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(&bad) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension(bad));
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if total > cap {
            return Err(Error::DimensionCap { total, cap });
        }
        Ok(Self { dims })
    }

    /// Single-subsystem space.
    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Splits a composite index into per-subsystem indices.
    pub fn unravel(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    pub fn ravel(&self, indices: &[usize]) -> usize {
        indices.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }
}

/// Sparse complex operator on a [`CompositeSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    space: CompositeSpace,
    matrix: SparseMatrix,
}

impl OperatorMatrix {
    pub fn new(space: CompositeSpace, matrix: SparseMatrix) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: matrix.nrows() });
        }
        Ok(Self { space, matrix })
    }

    pub fn zeros(space: &CompositeSpace) -> Self {
        let d = space.total_dim();
        Self { space: space.clone(), matrix: SparseMatrix::zeros(d, d) }
    }

    pub fn identity(space: &CompositeSpace) -> Self {
        Self { space: space.clone(), matrix: SparseMatrix::identity(space.total_dim()) }
    }

    pub fn from_dense(space: CompositeSpace, m: &Mat<C64>) -> Result<Self> {
        Self::new(space, SparseMatrix::from_dense(m))
    }

    /// Wraps a matrix that the caller asserts is Hermitian; the assertion is
    /// checked to `1e-12`.
    pub fn hermitian(space: CompositeSpace, matrix: SparseMatrix) -> Result<Self> {
        let op = Self::new(space, matrix)?;
        let err = op.hermiticity_error();
        if err >= HERMITIAN_TOL * op.matrix.max_abs().max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "operator asserted Hermitian deviates by {err:.3e}"
            )));
        }
        Ok(op)
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix.get(i, j)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        self.matrix.to_dense()
    }

    pub fn adjoint(&self) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, s: impl Into<C64>) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.scale(s.into()) }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_space(other)?;
        Ok(Self { space: self.space.clone(), matrix: self.matrix.add(&other.matrix) })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_space(other)?;
        Ok(Self { space: self.space.clone(), matrix: self.matrix.sub(&other.matrix) })
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        self.check_space(other)?;
        Ok(Self { space: self.space.clone(), matrix: self.matrix.matmul(&other.matrix) })
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.try_mul(other)?.try_sub(&other.try_mul(self)?)
    }

    /// Tensor product on the concatenated space.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        let mut dims = self.space.dims.clone();
        dims.extend_from_slice(&other.space.dims);
        let space = CompositeSpace::new(dims)?;
        Ok(Self { space, matrix: self.matrix.kron(&other.matrix) })
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.matrix.hermiticity_error()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() < HERMITIAN_TOL * self.matrix.max_abs().max(1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.max_abs()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.nnz() == 0
    }

    fn check_space(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }
}

/// Bosonic lowering operator truncated to `dim` Fock levels.
pub fn annihilation(dim: usize) -> Result<OperatorMatrix> {
    let space = CompositeSpace::single(dim)?;
    let trips = (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0)));
    OperatorMatrix::new(space, SparseMatrix::from_triplets(dim, dim, trips))
}

pub fn creation(dim: usize) -> Result<OperatorMatrix> {
    Ok(annihilation(dim)?.adjoint())
}

/// `a†a` on `dim` Fock levels.
pub fn number(dim: usize) -> Result<OperatorMatrix> {
    let space = CompositeSpace::single(dim)?;
    let diag: Vec<C64> = (0..dim).map(|n| C64::new(n as f64, 0.0)).collect();
    OperatorMatrix::new(space, SparseMatrix::diagonal(&diag))
}

/// `σ⁻ = |g⟩⟨e|` with `|g⟩` at index 0.
pub fn lowering_emitter() -> OperatorMatrix {
    let space = CompositeSpace { dims: vec![2] };
    let m = SparseMatrix::from_triplets(2, 2, [(0, 1, C64::new(1.0, 0.0))]);
    OperatorMatrix { space, matrix: m }
}

/// Places `op` at subsystem `index` of `space`, identity elsewhere.
pub fn embed(op: &OperatorMatrix, index: usize, space: &CompositeSpace) -> Result<OperatorMatrix> {
    let dims = space.dims();
    if index >= dims.len() {
        return Err(Error::IndexOutOfRange { index, len: dims.len() });
    }
    if op.dim() != dims[index] {
        return Err(Error::DimensionMismatch { expected: dims[index], found: op.dim() });
    }
    let before: usize = dims[..index].iter().product();
    let after: usize = dims[index + 1..].iter().product();
    let mut m = op.matrix.clone();
    if before > 1 {
        m = SparseMatrix::identity(before).kron(&m);
    }
    if after > 1 {
        m = m.kron(&SparseMatrix::identity(after));
    }
    OperatorMatrix::new(space.clone(), m)
}

/// Density matrix on a composite space.
#[derive(Debug, Clone)]
pub struct DensityState {
    space: CompositeSpace,
    matrix: Mat<C64>,
}

impl DensityState {
    /// Validates unit trace, Hermiticity and numerical positivity.
    pub fn new(space: CompositeSpace, matrix: Mat<C64>) -> Result<Self> {
        let state = Self::new_unchecked_positivity(space, matrix)?;
        let min = state.min_eigenvalue()?;
        if min < -STATE_POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:.3e}")));
        }
        Ok(state)
    }

    /// Checks trace and Hermiticity only; used for integrator output where
    /// positivity is inherited from the generator.
    pub(crate) fn new_unchecked_positivity(space: CompositeSpace, matrix: Mat<C64>) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: matrix.nrows() });
        }
        let tr = linalg::trace(&matrix);
        if (tr - C64::new(1.0, 0.0)).norm() > STATE_TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let herm = linalg::hermiticity_error(&matrix);
        if herm > STATE_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("hermiticity error {herm:.3e}")));
        }
        Ok(Self { space, matrix })
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalised) ket.
    pub fn pure(space: CompositeSpace, ket: &[C64]) -> Result<Self> {
        let d = space.total_dim();
        if ket.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: ket.len() });
        }
        let norm2: f64 = ket.iter().map(|c| c.norm_sqr()).sum();
        if norm2 == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        let m = Mat::from_fn(d, d, |i, j| ket[i] * ket[j].conj() / norm2);
        Self::new(space, m)
    }

    /// Computational basis projector `|k⟩⟨k|`.
    pub fn basis(space: CompositeSpace, indices: &[usize]) -> Result<Self> {
        let k = space.ravel(indices);
        let mut ket = vec![C64::new(0.0, 0.0); space.total_dim()];
        ket[k] = C64::new(1.0, 0.0);
        Self::pure(space, &ket)
    }

    pub fn maximally_mixed(space: CompositeSpace) -> Self {
        let d = space.total_dim();
        let m = Mat::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(1.0 / d as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { space, matrix: m }
    }

    /// `ρ_A ⊗ ρ_B` on the concatenated space.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let mut dims = self.space.dims.clone();
        dims.extend_from_slice(&other.space.dims);
        let space = CompositeSpace::new(dims)?;
        let (da, db) = (self.space.total_dim(), other.space.total_dim());
        let m = Mat::from_fn(da * db, da * db, |i, j| {
            self.matrix[(i / db, j / db)] * other.matrix[(i % db, j % db)]
        });
        Self::new(space, m)
    }

    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let vals = linalg::hermitian_eigenvalues(&self.matrix)?;
        Ok(vals.first().copied().unwrap_or(0.0))
    }

    pub fn purity(&self) -> f64 {
        let m = &self.matrix * &self.matrix;
        linalg::trace(&m).re
    }

    /// Reduced density matrix of subsystem `index`.
    pub fn partial_trace_keep(&self, index: usize) -> Result<Mat<C64>> {
        let dims = self.space.dims();
        if index >= dims.len() {
            return Err(Error::IndexOutOfRange { index, len: dims.len() });
        }
        let before: usize = dims[..index].iter().product();
        let dk = dims[index];
        let after: usize = dims[index + 1..].iter().product();
        let mut out = Mat::<C64>::zeros(dk, dk);
        for i in 0..dk {
            for j in 0..dk {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..before {
                    for a in 0..after {
                        let r = (b * dk + i) * after + a;
                        let c = (b * dk + j) * after + a;
                        acc += self.matrix[(r, c)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// Clips eigenvalues in `[-1e-8, 0)` to zero and renormalises. Larger
    /// negativity is reported as an error.
    pub fn repaired(&self) -> Result<Self> {
        let (vals, vecs) = linalg::hermitian_eigen(&self.matrix)?;
        let min = vals.first().copied().unwrap_or(0.0);
        if min >= 0.0 {
            return Ok(self.clone());
        }
        if min < -STATE_POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:.3e}")));
        }
        let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let d = self.space.total_dim();
        let m = Mat::from_fn(d, d, |i, j| {
            let mut acc = C64::new(0.0, 0.0);
            for (k, &w) in clipped.iter().enumerate() {
                if w > 0.0 {
                    acc += vecs[(i, k)] * vecs[(j, k)].conj() * w;
                }
            }
            acc / total
        });
        let m = Mat::from_fn(d, d, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        Ok(Self { space: self.space.clone(), matrix: m })
    }
}

/// `Tr(ρ A)`.
pub fn expectation(state: &DensityState, op: &OperatorMatrix) -> Result<C64> {
    if state.space != op.space {
        return Err(Error::SpaceMismatch);
    }
    let mut acc = C64::new(0.0, 0.0);
    for (i, j, v) in op.matrix.triplets() {
        acc += v * state.matrix[(j, i)];
    }
    Ok(acc)
}

/// Photon-number distribution of the cavity (subsystem 0).
pub fn cavity_distribution(state: &DensityState) -> Result<PhotonDistribution> {
    let reduced = state.partial_trace_keep(0)?;
    let probs: Vec<f64> = (0..reduced.nrows()).map(|n| reduced[(n, n)].re).collect();
    PhotonDistribution::new(probs)
}
