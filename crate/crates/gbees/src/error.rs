//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbeesError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("operation requires a nonempty grid")]
    EmptyGrid,

    #[error("total probability mass is not positive ({0})")]
    NonPositiveMass(f64),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("measurement at t={time} annihilated the PDF (normalization constant is zero)")]
    ZeroLikelihood { time: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GbeesError>;
