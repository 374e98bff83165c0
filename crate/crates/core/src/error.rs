use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("backward requires a scalar root, got {0} elements")]
    NonScalarRoot(usize),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),
    #[error("normalization statistics missing")]
    StatsMissing,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
