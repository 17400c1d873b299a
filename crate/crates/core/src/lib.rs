pub mod dynamics;
pub mod eigenstructure;
pub mod error;
pub mod experiment;
pub mod hilbert;
pub mod linalg;
pub mod model;
pub mod pnr;
pub mod sparse;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex<f64>;
