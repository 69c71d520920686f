use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("manifest line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
