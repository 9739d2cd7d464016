use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive distance {0} m")]
    NonPositiveDistance(f64),

    #[error("phase vector entry {index} has modulus {modulus}, expected 1")]
    NotUnitModulus { index: usize, modulus: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty path list")]
    EmptyPaths,

    #[error("degenerate precoder update at BS {bs}: {reason}")]
    DegenerateUpdate { bs: usize, reason: String },

    #[error("history has no snapshot for block {block} (holds {oldest}..={newest})")]
    HistoryMissing {
        block: usize,
        oldest: usize,
        newest: usize,
    },

    #[error("block {block} at BS {bs} expected an inbound message but none arrived")]
    MissingInbox { bs: usize, block: usize },

    #[error("worker for BS {bs} failed in block {block}: {source}")]
    Worker {
        bs: usize,
        block: usize,
        source: Box<Error>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
