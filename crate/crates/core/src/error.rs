use thiserror::Error;

use crate::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("fixed-point overflow: |{value}| * {scale} does not fit below modulus/2 = {half}")]
    Overflow { value: f64, scale: u64, half: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bit string length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown model shape {0}")]
    UnknownShape(String),

    #[error("non-finite value in matrix")]
    NonFinite,

    #[error("no candidates to rank")]
    EmptyCandidates,

    #[error("mask group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),

    #[error("incomplete group: expected {expected} shares, got {got}")]
    IncompleteGroup { expected: usize, got: usize },

    #[error("quantile score undefined for a single-node pool")]
    DegeneratePool,

    #[error("cannot build a ring over an empty pool")]
    EmptyPool,

    #[error("requested {count} nodes from a pool of {pool}")]
    CountExceedsPool { count: usize, pool: usize },

    #[error("insufficient pool: need {need} {what}, have {have}")]
    InsufficientPool {
        what: &'static str,
        need: usize,
        have: usize,
    },

    #[error("node {0} has an empty data shard")]
    EmptyShard(NodeId),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("round {0}: no aggregation candidates")]
    NoCandidates(u64),

    #[error("unknown payload kind {0:?}")]
    UnknownPayload(String),

    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}
