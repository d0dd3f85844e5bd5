use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Position-carrying syntax or semantic error from one of the text parsers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the input where the problem was detected.
    pub pos: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: {}", self.pos, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error {0}")]
    Syntax(ParseError),

    #[error("semantic error {0}")]
    Semantic(ParseError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value {value} is outside the range of the gain (sup ≈ {bound})")]
    Range { value: f64, bound: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize, last: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gain matrix entry ({row}, {col}) is not linear")]
    NotLinear { row: usize, col: usize },

    #[error("invalid gain matrix: {0}")]
    InvalidMatrix(String),

    #[error("spectral radius {rho} is not below 1")]
    SpectralRadiusTooLarge { rho: f64 },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotHurwitz { abscissa: f64 },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("evaluation failed: {0}")]
    Eval(String),

    /// An error tied to a location in structured input, as a JSON pointer.
    #[error("{path}: {source}")]
    Located { path: String, source: Box<Error> },
}

impl Error {
    /// Prefixes the location with `path`, joining nested locations.
    pub fn at(self, path: impl Into<String>) -> Self {
        match self {
            Error::Located { path: inner, source } => Error::Located { path: path.into() + &inner, source },
            other => Error::Located { path: path.into(), source: Box::new(other) },
        }
    }
}
