//! Lindblad dynamics: generator, steady state, time evolution and photon
//! statistics.

mod correlation;
pub mod displacement;
mod evolve;
mod liouvillian;
mod solve;
mod steady;

pub use correlation::*;
pub use evolve::*;
pub use liouvillian::*;
pub use solve::*;
pub use steady::*;
