use std::path::PathBuf;

use crate::grid::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid node {0} for grid {1}x{2}")]
    InvalidNode(NodeId, usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("hall too small to cover: {0}")]
    Coverage(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("node out of range at line {line}: {msg}")]
    Range { line: usize, msg: String },

    #[error("ordering violated: {0}")]
    Ordering(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("incomplete grid, missing nodes: {0:?}")]
    IncompleteGrid(Vec<NodeId>),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("shape mismatch in {layer}: {msg}")]
    Shape { layer: String, msg: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("cross-validation error: {0}")]
    CrossValidation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; layer weight norms {layer_norms:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        layer_norms: Vec<f64>,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
