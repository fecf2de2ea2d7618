use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum GinError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("node id {id} out of range for {n} nodes")]
    Range { id: usize, n: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("zero variance series at node {0}")]
    ZeroVariance(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, GinError>;

impl GinError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GinError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        GinError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

impl From<serde_json::Error> for GinError {
    fn from(e: serde_json::Error) -> Self {
        GinError::Serde(e.to_string())
    }
}

impl From<csv::Error> for GinError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        GinError::Parse {
            line,
            msg: e.to_string(),
        }
    }
}
