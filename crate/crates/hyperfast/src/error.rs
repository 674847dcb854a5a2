use thiserror::Error;

/// Errors surfaced by the solvers and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid too small: need at least {needed} nodes, have {have}")]
    GridTooSmall { needed: usize, have: usize },

    #[error("non-finite value encountered ({context})")]
    NonFinite { context: String },

    #[error("shooting integration produced a non-finite state at r = {r}")]
    ShootingNonFinite { r: f64 },

    #[error("no amplitude bracket found in [{lo:e}, {hi:e}] (is m above the critical exponent?)")]
    BracketNotFound { lo: f64, hi: f64 },

    #[error("tail plateau test failed: {0}")]
    PlateauFailure(String),

    #[error("inverse iteration stagnated after {iterations} sweeps")]
    Stagnation { iterations: usize },

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("time step collapsed at t = {t} after {retries} retries")]
    StepCollapse { t: f64, retries: usize },

    #[error("extinction-time fit failed: {0}")]
    ExtinctionFit(String),

    #[error("time {t} is not before the extinction time {big_t}")]
    PastExtinction { t: f64, big_t: f64 },

    #[error("trajectory has no snapshots in the requested window")]
    EmptyWindow,

    #[error("window guard: {0}")]
    WindowGuard(String),

    #[error("derivative order {k} unsupported (max {max})")]
    OrderUnsupported { k: usize, max: usize },

    #[error("barrier constraint violated: {0}")]
    BarrierConstraint(String),

    #[error("no admissible value found in scan range")]
    ScanExhausted,

    #[error("boundary ordering fails: {0}")]
    BoundaryOrdering(String),

    #[error("configuration error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
