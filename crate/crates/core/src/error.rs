use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration, detected before any computation.
    #[error("configuration error: {0}")]
    Config(String),

    /// A physical precondition was violated (out-of-range depth, wrong lattice size, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} sites")]
    SiteOutOfRange { index: usize, len: usize },

    #[error("quadrature failed to converge on [{a}, {b}]: estimate {estimate:e}, error {error:e}")]
    Quadrature {
        a: f64,
        b: f64,
        estimate: f64,
        error: f64,
    },

    #[error("tunneling fit rejected: max relative residual {residual:.3} exceeds {limit:.3}")]
    FitResidual { residual: f64, limit: f64 },

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    /// `trace` holds everything sampled before giving up.
    #[error("steady state not reached by t = {t_max}: last relative change {last_change:e}")]
    NotConverged {
        t_max: f64,
        last_change: f64,
        trace: Box<crate::lindblad::CurrentTrace>,
    },

    #[error("stationary state is not unique: {0}")]
    Degenerate(String),

    #[error("stationary state residual {residual:e} exceeds {limit:e}")]
    Residual { residual: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Quadrature { .. }
            | Error::StepUnderflow { .. }
            | Error::NotConverged { .. }
            | Error::Degenerate(_)
            | Error::Residual { .. } => 3,
            Error::Precondition(_)
            | Error::DimensionMismatch { .. }
            | Error::SiteOutOfRange { .. }
            | Error::FitResidual { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}
