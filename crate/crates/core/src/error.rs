use thiserror::Error;

/// Errors raised by the design, simulation and configuration layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fock dimension must be at least 2 (got {0})")]
    FockTooSmall(usize),

    #[error("antisymmetric Pauli sums are only defined for the z axis")]
    AntisymmetricAxis,

    #[error("state normalization off by {deviation:e}")]
    Normalization { deviation: f64 },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("no sign change of the target function in [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size underflow at t = {t:e}")]
    StepUnderflow { t: f64 },

    #[error("norm drift {drift:e} at t = {t:e} exceeds tolerance")]
    NormDrift { t: f64, drift: f64 },

    #[error("density matrix lost positivity: min eigenvalue {min_eig:e}")]
    Positivity { min_eig: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
