use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("robot at {x:?} coincides with obstacle {index} at {obstacle:?}")]
    CoincidentObstacle {
        index: usize,
        x: [f64; 2],
        obstacle: [f64; 2],
    },

    #[error("no active subset satisfies the KKT conditions")]
    Infeasible,

    #[error("active constraint {index} has a vanishing normal")]
    DegenerateConstraint { index: usize },

    #[error("dependent active rows with ratio {lambda} violate the coincident/midpoint geometry")]
    LemmaViolation { lambda: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteState(&'static str),

    #[error("excitation window contains no samples")]
    EmptyWindow,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("safety violation at t={t}: {detail}")]
    SafetyViolation { t: f64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
}
