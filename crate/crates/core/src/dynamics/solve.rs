//! Steady state of a [`SystemSpec`] with automatic truncation and, for
//! strong drives, a coherently displaced cavity frame.

use serde::{Deserialize, Serialize};

use super::displacement::mean_field_amplitude;
use super::liouvillian::build_liouvillian;
use super::steady::{steadystate_with, SteadyStateOptions, SteadyStateResult, TRUNCATION_WARN};
use crate::error::Result;
use crate::hilbert;
use crate::model::{self, SystemSpec};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementPolicy {
    /// Plain Fock basis.
    Off,
    /// Displace by the mean-field amplitude when it predicts at least
    /// `min_photons`, or when the plain basis cannot hold the state.
    Auto { min_photons: f64 },
}

impl Default for DisplacementPolicy {
    fn default() -> Self {
        Self::Auto { min_photons: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub steady: SteadyStateOptions,
    /// Target for the top-level population of the cavity basis.
    pub tail_tol: f64,
    /// Whether the cavity truncation may grow beyond the spec's value.
    pub adaptive: bool,
    /// Largest Hilbert-space dimension the truncation may grow to.
    pub max_state_dim: usize,
    pub displacement: DisplacementPolicy,
    /// Frame refinements `α ← α + ⟨b⟩`.
    pub max_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            steady: SteadyStateOptions::default(),
            tail_tol: TRUNCATION_WARN,
            adaptive: true,
            max_state_dim: 320,
            displacement: DisplacementPolicy::default(),
            max_refinements: 6,
        }
    }
}

/// Steady state of the driven system in the drive frame.
pub fn solve_steady_state(spec: &SystemSpec, opts: &SolveOptions) -> Result<SteadyStateResult> {
    spec.validate()?;
    let per_level = spec.space()?.total_dim() / (spec.cavity_truncation + 1);
    let max_n = (opts.max_state_dim / per_level).max(spec.cavity_truncation + 1) - 1;

    let mut alpha = match opts.displacement {
        DisplacementPolicy::Off => C64::new(0.0, 0.0),
        DisplacementPolicy::Auto { min_photons } => {
            let mf = mean_field_amplitude(spec)?;
            if mf.norm_sqr() >= min_photons {
                mf
            } else {
                C64::new(0.0, 0.0)
            }
        }
    };
    let mut n_max = spec.cavity_truncation;
    let mut rounds = 0;
    loop {
        let ss = loop {
            let ss = solve_in_frame(&spec.clone().with_truncation(n_max), alpha, &opts.steady)?;
            if !opts.adaptive || ss.diagnostics.truncation_tail <= opts.tail_tol || n_max >= max_n {
                break ss;
            }
            n_max = (n_max + n_max / 2 + 1).min(max_n);
            log::debug!("growing cavity truncation to {n_max}");
        };
        let shift = frame_amplitude(&ss)?;
        let may_refine = matches!(opts.displacement, DisplacementPolicy::Auto { .. }) && rounds < opts.max_refinements;
        let poorly_centred = if ss.is_displaced() {
            shift.norm() > 0.5
        } else {
            ss.diagnostics.truncation_tail > opts.tail_tol && shift.norm_sqr() > 1.0
        };
        if may_refine && poorly_centred {
            alpha += shift;
            rounds += 1;
            log::debug!("refining displacement to {alpha}");
            continue;
        }
        if ss.diagnostics.truncation_tail > opts.tail_tol {
            log::warn!(
                "cavity tail {:.3e} above {:.1e} at n_max = {n_max}",
                ss.diagnostics.truncation_tail,
                opts.tail_tol
            );
        }
        return Ok(ss);
    }
}

fn solve_in_frame(spec: &SystemSpec, alpha: C64, opts: &SteadyStateOptions) -> Result<SteadyStateResult> {
    let h = model::build_rotating_frame_displaced(spec, alpha)?;
    let c = model::build_collapse_set_displaced(spec, alpha)?;
    let mut ss = steadystate_with(&build_liouvillian(&h, &c)?, opts)?;
    ss.displacement = alpha;
    Ok(ss)
}

/// `⟨b⟩` of the frame cavity operator.
fn frame_amplitude(ss: &SteadyStateResult) -> Result<C64> {
    let space = ss.state.space();
    let b = hilbert::embed(&hilbert::annihilation(space.dims()[0])?, 0, space)?;
    hilbert::expectation(&ss.state, &b)
}
