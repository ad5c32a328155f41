use thiserror::Error;

/// Errors produced by the imaging library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("sampling rate {0} outside (0, 1]")]
    RateOutOfRange(f64),

    #[error("measurement length {got} does not match mask population {expected}")]
    MeasurementLength { expected: usize, got: usize },

    #[error("solver failure: {reason} (trace length {})", trace.len())]
    SolverFailure { reason: String, trace: Vec<f64> },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("missing features for class {0}")]
    MissingClassFeatures(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
