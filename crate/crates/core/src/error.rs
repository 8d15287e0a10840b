use thiserror::Error;

use crate::scenario::ValidationErrors;

/// Errors raised while simulating a path or accumulating a ledger.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("schedule `{schedule}` is not aligned with the time grid: {detail}")]
    ScheduleMismatch { schedule: String, detail: String },

    #[error("jump map `{map}` produced |value| = {value} above the declared bound {bound}")]
    JumpBoundExceeded { map: String, value: f64, bound: f64 },

    #[error("state component {component} reached {value}, outside the excursion box ±{bound}")]
    StateExcursion {
        component: usize,
        value: f64,
        bound: f64,
    },

    #[error("inputs were built from different noise: {0}")]
    NoiseMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integrand returned a non-finite value {value} at node {node:?}")]
    QuadratureOverflow { node: Vec<f64>, value: f64 },

    #[error("tensor quadrature supports at most 3 dimensions, got {0}")]
    TooManyDimensions(usize),

    #[error("invalid mollifier parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("coarsening factor {factor} does not divide {steps} steps")]
pub struct FactorMismatch {
    pub factor: usize,
    pub steps: usize,
}

/// Failures while reading, parsing or writing configuration and dump files.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config serialization error: {0}")]
    Serialize(String),
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Factor(#[from] FactorMismatch),
    #[error("{0}")]
    Study(String),
}

impl From<ValidationErrors> for Error {
    fn from(e: ValidationErrors) -> Self {
        Error::Config(ConfigError::Invalid(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
