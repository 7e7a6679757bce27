use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown layer `{name}` (available: {available})")]
    UnknownLayer { name: String, available: String },

    #[error("weight transfer failed for layers: {0}")]
    Transfer(String),

    #[error("malformed {what} at byte {offset}: {detail}")]
    Format {
        what: &'static str,
        offset: usize,
        detail: String,
    },

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("class taxonomy mismatch: {0}")]
    Taxonomy(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn io_err(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.as_ref().display().to_string(),
        source,
    }
}
