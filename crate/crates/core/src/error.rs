use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("linear solve failed at t = {t}: {reason}")]
    Numerical { t: f64, reason: String },

    #[error("flow degenerated at t = {t}, x = {x:?}: det = {det}")]
    FlowDegeneracy { t: f64, x: Vec<f64>, det: f64 },

    #[error("flow inversion did not converge at t = {t} for target {target:?} (residual {residual:e})")]
    Inversion { t: f64, target: Vec<f64>, residual: f64 },

    #[error("path resolution {step:e} too coarse for depth {depth}; refine the path first")]
    Resolution { step: f64, depth: u32 },

    #[error("empty interval [{lo}, {hi}] on the path grid")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("exponent fit needs at least {needed} points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Parameter(msg.into()))
}
