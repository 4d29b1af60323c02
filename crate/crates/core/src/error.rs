use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("heat kernel is singular at t = 0, x = 0")]
    Singularity,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("overflow guard tripped at step {step} (t = {time}): value {value:e} exceeds {guard:e}")]
    Overflow {
        step: usize,
        time: f64,
        value: f64,
        guard: f64,
    },

    #[error("({what}) is not on the recorded grid")]
    OffGrid { what: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
