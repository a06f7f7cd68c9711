use thiserror::Error;

/// Errors raised by the simulation and diagnostic layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite sample in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("density {min:.6e} fell below the floor {floor:.6e}")]
    DensityFloor { min: f64, floor: f64 },

    #[error("time step {dt:.6e} exceeds the CFL bound {limit:.6e} (cfl_factor * h / max(|u| + c_s + |B|/sqrt(rho)))")]
    CflViolation { dt: f64, limit: f64 },

    #[error("flow map folded: min det DX = {min_jacobian:.6e}")]
    Fold { min_jacobian: f64 },

    #[error("insufficient snapshots: need {needed}, have {have}")]
    InsufficientSnapshots { needed: usize, have: usize },

    #[error("time {t} outside trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("fixed-point iteration diverged: successive-difference ratio above 1 for {streak} consecutive iterations")]
    NonConvergence { streak: usize },
}

impl Error {
    /// Stable machine-readable code for reports and exit diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidParams(_) => "invalid_params",
            Error::NonFinite(_) => "non_finite",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DensityFloor { .. } => "density_floor",
            Error::CflViolation { .. } => "cfl_violation",
            Error::Fold { .. } => "fold",
            Error::InsufficientSnapshots { .. } => "insufficient_snapshots",
            Error::OutOfRange { .. } => "out_of_range",
            Error::NonConvergence { .. } => "non_convergence",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
