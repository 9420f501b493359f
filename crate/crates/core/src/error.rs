use thiserror::Error;

/// Errors raised by the simulator, the oracle and the comparison harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("field contains a non-finite value at cell {index}")]
    NonFinite { index: usize },

    #[error("density must be nonnegative, found {value:e} at cell {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("support touches the box boundary (cell {index}); free-space quadrature needs zero data near the edge")]
    SupportTouchesBoundary { index: usize },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("numerical failure at step {step} (t = {t:e}): {reason}")]
    NumericalFailure { step: usize, t: f64, reason: String },

    #[error("mass reached the box edge at t = {t:e}")]
    BoxExit { t: f64 },

    #[error("barrier does not dominate the data at t = 0 (margin {margin:e})")]
    InitialDomination { margin: f64 },

    #[error("calibration bracket failure: {0}")]
    Bracket(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::CflViolation { .. } | Error::NumericalFailure { .. }
                | Error::BoxExit { .. }
                | Error::Bracket(_)
        )
    }

    /// Short machine-readable tag, used in the CLI's JSON error payload.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::GridMismatch => "grid_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NegativeDensity { .. } => "negative_density",
            Error::SupportTouchesBoundary { .. } => "support_touches_boundary",
            Error::CflViolation { .. } => "cfl_violation",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::BoxExit { .. } => "box_exit",
            Error::InitialDomination { .. } => "initial_domination",
            Error::Bracket(_) => "bracket_failure",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
