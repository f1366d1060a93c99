use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite after {attempts} jitter attempts")]
    DegenerateMatrix { attempts: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid dimension {0}: at least 2 required")]
    InvalidDimension(usize),

    #[error("reward mean {0} lies outside [0, 1]")]
    InvalidMean(f64),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameter outside the supported range: {0}")]
    OutOfRange(String),

    #[error("tree capacity of {capacity} leaves exceeded")]
    CapacityExceeded { capacity: usize },

    #[error("missing label {0}")]
    MissingLabel(String),

    #[error("expected counts from {expected} users, got {actual}")]
    UserCountMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("episode (algo={algo}, epsilon={epsilon}, seed={seed}) failed: {source}")]
    Episode {
        algo: String,
        epsilon: f64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
