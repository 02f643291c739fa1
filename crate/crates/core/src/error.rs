use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {value} at row {row}, column {column} of the feature matrix")]
    NonFiniteFeature { row: usize, column: usize, value: f64 },

    #[error("invalid feature matrix shape {rows}x{cols} for {len} values")]
    FeatureShape { rows: usize, cols: usize, len: usize },

    #[error("c_bias {given} is below the minimum {minimum} required to keep dropout probabilities bounded")]
    CBiasTooSmall { given: f64, minimum: f64 },

    #[error("target retained dimension {d_target} must lie in [1, {dims})")]
    InvalidTargetDim { d_target: usize, dims: usize },

    #[error("retained column {column} has dropout probability {prob}; its rescale factor is undefined")]
    KeptWithCertainDrop { column: usize, prob: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("bit depth {0} outside the supported range 1..=16")]
    InvalidBitDepth(u8),

    #[error("non-finite gradient component {value} at index {index}")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("gradient range {0} does not fit in a binary32 header")]
    RangeOverflow(f64),

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("no client reports to aggregate")]
    EmptyReports,

    #[error("client {0} appears more than once in a round")]
    DuplicateClient(usize),

    #[error("cannot split {samples} samples across {clients} clients")]
    TooManyClients { clients: usize, samples: usize },

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite loss in client {client} at round {round}; check the learning rate or input scaling")]
    Diverged { client: usize, round: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
