use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and a layer) disagree on shape.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An argument is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A configuration cannot be honoured (split policy, zero variance, graph rule...).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Malformed input record.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A caller broke an API contract (e.g. backward from a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// Non-finite values or failed numerical routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shapes(op: &'static str, a: &[usize], b: &[usize]) -> Self {
        Error::dim(op, format!("incompatible shapes {a:?} and {b:?}"))
    }
}
