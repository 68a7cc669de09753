use std::path::PathBuf;

use thiserror::Error;
use viewuq_autodiff::TensorFileError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which argument of a two-input statistic was degenerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    First,
    Second,
}

impl std::fmt::Display for Operand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Operand::First => "first",
            Operand::Second => "second",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] viewuq_autodiff::Error),
    #[error("tensor container: {0}")]
    Container(#[from] TensorFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("view out of domain: {0}")]
    ViewDomain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: expected {expected} bytes, found {actual}")]
    RawSize { path: PathBuf, expected: u64, actual: u64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("MC-Dropout requires nonzero dropout")]
    ZeroDropout,
    #[error("at least {needed} samples required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0} input has zero variance")]
    ZeroVariance(Operand),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("sweep in {0} is incomplete")]
    IncompleteSweep(PathBuf),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
