use thiserror::Error;

/// Crate-wide error type. Every fallible public operation returns
/// [`Result`] so callers can distinguish bad input from internal limits.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at {node}: {detail}")]
    Shape { node: String, detail: String },

    #[error("non-finite value produced by {node}")]
    NonFinite { node: String },

    #[error("missing binding for leaf `{0}`")]
    MissingBinding(String),

    #[error("graph has no output named `{0}`")]
    UnknownOutput(String),

    #[error("gradient requested for non-scalar output `{output}` without an explicit output gradient")]
    NonScalarOutput { output: String },

    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training error: {0}")]
    Train(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
