use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::Serialize;

use super::correlation::{self, PhotonDistribution};
use super::displacement;
use super::liouvillian::Liouvillian;
use crate::error::{Error, Result};
use crate::hilbert::{self, DensityState};
use crate::linalg;
use crate::C64;

/// Tail population above which a truncation warning is logged.
pub const TRUNCATION_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Residual bound relative to the largest generator entry.
    pub residual_rel_tol: f64,
    /// Solve a second time with a different constraint row and compare; a
    /// degenerate null space makes the two disagree.
    pub check_uniqueness: bool,
    pub refinement_steps: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { residual_rel_tol: 1e-8, check_uniqueness: true, refinement_steps: 2 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateDiagnostics {
    /// Population of the highest retained cavity level.
    pub truncation_tail: f64,
    /// Number of linear solves, including refinement steps.
    pub iterations: usize,
    pub cavity_truncation: usize,
}

#[derive(Debug, Clone)]
pub struct SteadyStateResult {
    pub state: DensityState,
    pub residual: f64,
    pub diagnostics: SteadyStateDiagnostics,
    /// Coherent offset `α` of the frame the state was solved in; the lab
    /// field operator is `a + α`. Zero for an ordinary solve.
    pub displacement: C64,
}

impl SteadyStateResult {
    pub fn is_displaced(&self) -> bool {
        self.displacement != C64::new(0.0, 0.0)
    }

    /// Lab-frame cavity photon-number distribution.
    pub fn photon_distribution(&self) -> Result<PhotonDistribution> {
        if !self.is_displaced() {
            return hilbert::cavity_distribution(&self.state);
        }
        let reduced = self.state.partial_trace_keep(0)?;
        displacement::lab_distribution(&reduced, self.displacement)
    }

    pub fn mean_photon_number(&self) -> Result<f64> {
        Ok(correlation::normal_moments(&self.state, self.displacement)?.0)
    }

    /// Operator-route `g⁽²⁾(0)` of the lab field.
    pub fn g2(&self) -> Result<f64> {
        correlation::g2_with_shift(&self.state, self.displacement)
    }
}

pub fn steadystate(l: &Liouvillian) -> Result<SteadyStateResult> {
    steadystate_with(l, &SteadyStateOptions::default())
}

pub fn steadystate_with(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyStateResult> {
    let d = l.hilbert_dim();
    let (x, iterations) = solve_with_trace_row(l, 0, opts.refinement_steps)?;
    let rho = normalize(&x, d)?;
    if opts.check_uniqueness && d > 1 {
        // last diagonal element instead of the first
        let (y, _) = solve_with_trace_row(l, d * d - 1, 0)?;
        let other = normalize(&y, d)?;
        let diff = linalg::max_abs(&(&rho - &other));
        if diff > 1e-6 {
            let residual = linalg::max_abs(&l.apply(&rho));
            log::debug!("steady state solutions differ by {diff:.3e}");
            return Err(Error::NonUniqueSteadyState { residual });
        }
    }
    let residual = linalg::max_abs(&l.apply(&rho));
    let scale = l.scale().max(1.0);
    if residual > opts.residual_rel_tol * scale {
        return Err(Error::Solver(format!(
            "steady-state residual {residual:.3e} exceeds {:.3e}",
            opts.residual_rel_tol * scale
        )));
    }
    let state = DensityState::new_unchecked_positivity(l.space().clone(), rho)?.repaired()?;
    let probs = hilbert::cavity_distribution(&state)?;
    let tail = probs.tail();
    if tail > TRUNCATION_WARN {
        log::warn!("cavity truncation tail P(n_max) = {tail:.3e}");
    }
    Ok(SteadyStateResult {
        state,
        residual,
        diagnostics: SteadyStateDiagnostics {
            truncation_tail: tail,
            iterations,
            cavity_truncation: probs.len() - 1,
        },
        displacement: C64::new(0.0, 0.0),
    })
}

/// Solves `L x = 0` with row `row` of `L` replaced by the trace functional.
fn solve_with_trace_row(l: &Liouvillian, row: usize, refinement: usize) -> Result<(Vec<C64>, usize)> {
    let d = l.hilbert_dim();
    let n = d * d;
    let mut triplets: Vec<Triplet<usize, usize, C64>> = l
        .matrix()
        .triplets()
        .filter(|&(i, _, _)| i != row)
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    for k in 0..d {
        triplets.push(Triplet::new(row, k + d * k, C64::new(1.0, 0.0)));
    }
    let m = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Solver(format!("sparse assembly: {e:?}")))?;
    let lu = m.sp_lu().map_err(|e| match e {
        faer::sparse::linalg::LuError::SymbolicSingular { .. } => {
            Error::NonUniqueSteadyState { residual: f64::NAN }
        }
        other => Error::Solver(format!("sparse LU: {other:?}")),
    })?;
    let mut b = Mat::<C64>::zeros(n, 1);
    b[(row, 0)] = C64::new(1.0, 0.0);
    let mut x = b.clone();
    lu.solve_in_place(x.as_mut());
    let mut iterations = 1;
    for _ in 0..refinement {
        let r = &b - &m * &x;
        let mut dx = r;
        lu.solve_in_place(dx.as_mut());
        x += &dx;
        iterations += 1;
    }
    let x: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonUniqueSteadyState { residual: f64::NAN });
    }
    Ok((x, iterations))
}

fn normalize(x: &[C64], d: usize) -> Result<Mat<C64>> {
    let m = linalg::unvectorize(x, d);
    let h = Mat::from_fn(d, d, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let tr = linalg::trace(&h).re;
    if !(tr.abs() > 1e-300) || !tr.is_finite() {
        return Err(Error::NonUniqueSteadyState { residual: f64::NAN });
    }
    // huge entries betray a (numerically) singular constraint system
    let big = linalg::max_abs(&h) / tr.abs();
    if big > 1e6 {
        return Err(Error::NonUniqueSteadyState { residual: f64::NAN });
    }
    Ok(Mat::from_fn(d, d, |i, j| h[(i, j)] / tr))
}
