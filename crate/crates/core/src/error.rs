use thiserror::Error;

/// Faults raised by operations. Constraint violations found while checking
/// instances or policies are reports, not errors; see
/// [`crate::instance::InstanceViolation`] and [`crate::policy::FeasibilityReport`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("policy is not binary at device {device}, task {task}")]
    NonBinaryPolicy { device: usize, task: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("deadline leaves no transmission time for device {device}, task {task}")]
    DeadlineCollapse { device: usize, task: usize },

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("request state space has {states} states, above the enumeration cap {cap}")]
    EnumerationCapExceeded { states: u128, cap: u128 },

    #[error("policy search space has {policies} candidates, above the search cap {cap}")]
    SearchCapExceeded { policies: u128, cap: u128 },

    #[error("negative budget: {0}")]
    NegativeBudget(String),

    #[error("task ratio {alpha} requires output no larger than input for this solver path")]
    AlphaAboveOne { alpha: f64 },

    #[error("task ratio {alpha} leaves local compute routes with no value; use the output-cache path")]
    AlphaAtMostOne { alpha: f64 },

    #[error("stationarity search failed for sample {sample}, task {task} (residual {residual:.3e})")]
    KktSearchFailed {
        sample: usize,
        task: usize,
        residual: f64,
    },

    #[error("multiplier bisection did not converge within {iterations} rounds (device {device})")]
    BisectionDiverged { device: usize, iterations: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
