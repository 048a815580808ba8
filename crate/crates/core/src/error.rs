use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArg { op: &'static str, msg: String },

    #[error("spatial dims {h}x{w} must be divisible by {multiple}")]
    Divisibility { h: usize, w: usize, multiple: usize },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("tensor is not attached to the active tape (tape dropped or never watched)")]
    DeadTape,

    #[error("gradients missing for parameters: {names:?}")]
    MissingGrads { names: Vec<String> },

    #[error("non-finite loss at step {step}; last finite record: {last}")]
    NanAbort { step: u64, last: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("image parse error: {0}")]
    ImageParse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
