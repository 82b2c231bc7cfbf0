use thiserror::Error;

/// Errors produced while building, propagating or analysing abstractions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unstable dynamics: {0}")]
    UnstableDynamics(String),

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("invalid partition bounds: {0}")]
    InvalidBounds(String),

    #[error("coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },

    #[error("symbol {symbol} out of range for an alphabet of {n} cells")]
    SymbolOutOfRange { symbol: usize, n: usize },

    #[error("sequence index {index} out of range (alphabet {n}, memory {ell})")]
    SequenceOutOfRange { index: usize, n: usize, ell: usize },

    #[error("sequence space {n}^{ell} does not fit in memory indices")]
    SequenceSpaceOverflow { n: usize, ell: usize },

    #[error("trace of length {len} is too short for memory {ell}")]
    TraceTooShort { len: usize, ell: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no initial samples were provided")]
    EmptySamples,

    #[error("sample of length {found} does not match memory {ell}")]
    SampleLength { found: usize, ell: usize },

    #[error("probability mass {leaked_mass:e} reached unobserved sequence {sequence:?}")]
    UnmodeledRegion { leaked_mass: f64, sequence: Vec<usize> },

    #[error("cell {cell} carries mass {mass:e} but was never visited in steady state")]
    UnvisitedCell { cell: usize, mass: f64 },

    #[error("marginal position {position} out of range for memory {ell}")]
    PositionOutOfRange { position: usize, ell: usize },

    #[error("densities are defined on different partitions or weights")]
    PartitionMismatch,

    #[error("operation requires an analytic ground truth: {0}")]
    AnalyticUnavailable(String),

    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenNonConvergence(usize),

    #[error("spectral assumption violated: {0}")]
    SpectralAssumption(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
