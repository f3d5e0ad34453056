use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate treatment")]
    DegenerateTreatment,

    #[error("no observed events")]
    NoEvents,

    #[error("non-finite {what} at row {row}")]
    NonFinite { row: usize, what: &'static str },

    #[error("positivity violation at row {row}: propensity {value}")]
    Positivity { row: usize, value: f64 },

    #[error("sign undefined")]
    SignUndefined,

    #[error("sample too small: {0}")]
    TooSmall(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
