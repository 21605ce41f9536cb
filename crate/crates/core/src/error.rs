use thiserror::Error;

use crate::dataset::TupleId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("attribute `{0}` is constant (raw_min == raw_max)")]
    ConstantColumn(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: `{field}` {message}")]
    InvalidConfig { field: String, message: String },

    #[error("sample reduction selected no tuples")]
    EmptyReduction,

    #[error("cannot form {k} clusters from {n} points")]
    ClusterCount { k: usize, n: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("posterior needs at least one labeled sample")]
    NoEvidence,

    #[error("no model yet")]
    NoModel,

    #[error("a batch is already awaiting feedback")]
    BatchPending,

    #[error("unknown tuple id {0}")]
    UnknownTuple(TupleId),

    #[error("tuple id {0} appears more than once in the feedback")]
    DuplicateFeedback(TupleId),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("exploration exhausted: no sampling area yields an unseen tuple")]
    Exhausted,

    #[error("could not place {count} disjoint target regions after {attempts} attempts")]
    Placement { count: usize, attempts: usize },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
