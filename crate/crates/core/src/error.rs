use thiserror::Error;

/// Errors raised by the solver, the diagnostics and the configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("basis construction failed: {0}")]
    Construction(String),

    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("vacuum: 1 + rho = {value:.3e} <= 0 at grid point {index}")]
    Vacuum { index: usize, value: f64 },

    #[error("positivity lost: 1 + g = {value:.3e} at grid point {point}, q-node {node}")]
    Positivity { point: usize, node: usize, value: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds the admissible step {limit:.3e}; try dt <= {suggested:.3e}")]
    Cfl { dt: f64, limit: f64, suggested: f64 },

    #[error("implicit solve did not converge: {0}")]
    SolverDivergence(String),

    #[error("Picard iteration is not contracting: {reason} (ratios {ratios:?}); data too large for the small-data regime")]
    NonContraction { ratios: Vec<f64>, reason: String },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error in [{section}] {key}: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
