use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("index {index} out of range for extent {len} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid attention mask: {0}")]
    InvalidMask(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unit {unit} has {len} tokens, more than the whole budget of {budget}")]
    UnitTooLong { unit: usize, len: usize, budget: usize },
    #[error("plan is already finished")]
    FinishedPrefix,
    #[error("too many sentences for exhaustive search: {0} > {1}")]
    TooManySentences(usize, usize),
    #[error("unknown record type `{0}`")]
    UnknownRecordType(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("prefilter cannot reach {budget} units: {remaining} records remain after dropping all droppable entries")]
    OverBudget { budget: usize, remaining: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
