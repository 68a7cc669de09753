use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("tensor shape {shape:?} needs {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("non-finite value produced by {0}")]
    NumericFault(String),
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("backward called before forward evaluated {0}")]
    NotEvaluated(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            detail: detail.into(),
        }
    }
}
