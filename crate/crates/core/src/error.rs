use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different layouts")]
    LayoutMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} outside stage of duration {duration}")]
    OutsideStage { t: f64, duration: f64 },

    #[error("non-finite value during propagation at t = {t}")]
    NonFinite { t: f64 },

    #[error("density operator lost positivity (min eigenvalue {min_eigenvalue:e}); step too large")]
    PositivityViolation { min_eigenvalue: f64 },

    #[error("numerical tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required configuration key `{0}`")]
    MissingKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
