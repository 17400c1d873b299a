use std::f64::consts::TAU;

use faer::Mat;

use crate::error::{Error, Result};
use crate::hilbert::{CompositeSpace, OperatorMatrix};
use crate::linalg;
use crate::model::CollapseSet;
use crate::sparse::SparseMatrix;
use crate::C64;

/// Lindblad generator acting on column-stacked density matrices,
/// `vec(ρ)[i + d·j] = ρ_ij`.
///
/// Hamiltonians and rates come in as ordinary frequencies (MHz); the
/// generator is stored in angular units, `L = 2π(-i[H,·] + Σ D_A)`, so time
/// is measured in microseconds.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    space: CompositeSpace,
    matrix: SparseMatrix,
}

impl Liouvillian {
    pub fn space(&self) -> &CompositeSpace {
        &self.space
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Hilbert-space dimension `d`; the superoperator is `d² × d²`.
    pub fn hilbert_dim(&self) -> usize {
        self.space.total_dim()
    }

    /// Largest entry magnitude, used to scale residual tolerances.
    pub fn scale(&self) -> f64 {
        self.matrix.max_abs()
    }

    pub fn apply(&self, rho: &Mat<C64>) -> Mat<C64> {
        let d = self.hilbert_dim();
        let v = linalg::vectorize(rho);
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        self.matrix.matvec(&v, &mut out);
        linalg::unvectorize(&out, d)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        self.matrix.to_dense()
    }
}

pub fn build_liouvillian(h: &OperatorMatrix, collapse: &CollapseSet) -> Result<Liouvillian> {
    if h.space() != collapse.space() {
        return Err(Error::SpaceMismatch);
    }
    let d = h.dim();
    let id = SparseMatrix::identity(d);
    let minus_i = C64::new(0.0, -1.0);
    let hm = h.matrix();
    // -i (I⊗H - Hᵀ⊗I)
    let mut l = id.kron(hm).sub(&hm.transpose().kron(&id)).scale(minus_i);
    for op in collapse.operators() {
        let a = op.matrix();
        let ada = a.adjoint().matmul(a);
        let jump = a.conj().kron(a);
        let anti = id.kron(&ada).add(&ada.transpose().kron(&id)).scale(C64::new(-0.5, 0.0));
        l = l.add(&jump).add(&anti);
    }
    Ok(Liouvillian { space: h.space().clone(), matrix: l.scale(C64::new(TAU, 0.0)) })
}
