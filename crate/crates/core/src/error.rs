use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subsystem dimension {0} (must be >= 2)")]
    InvalidDimension(usize),

    #[error("composite space dimension {total} exceeds cap {cap}")]
    DimensionCap { total: usize, cap: usize },

    #[error("subsystem index {index} out of range for {len} subsystems")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different composite spaces")]
    SpaceMismatch,

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid system specification: {0}")]
    InvalidSpec(String),

    #[error("singular parameters: {0}")]
    SingularParameter(&'static str),

    #[error("a coherent drive is required for this operation")]
    MissingDrive,

    #[error("a witness qubit is required for this operation")]
    MissingWitness,

    #[error("no polaritons exist without emitters (N = 0)")]
    NoPolariton,

    #[error("steady state is not unique (residual {residual:.3e})")]
    NonUniqueSteadyState { residual: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("correlation undefined for vacuum (<n> = {mean:.3e})")]
    UndefinedCorrelation { mean: f64 },

    #[error("spectrum grid too coarse: {points_per_linewidth:.2} points per linewidth (need >= 5)")]
    Resolution { points_per_linewidth: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("no peaks found above the prominence threshold")]
    NoPeaks,

    #[error("peaks at {first} GHz and {second} GHz both map to photon number {n}")]
    AmbiguousAssignment { n: usize, first: f64, second: f64 },

    #[error("no peak could be assigned to a photon number")]
    NoAssignedPeaks,

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("trace is under-sampled: {0}")]
    UnderSampled(String),

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
