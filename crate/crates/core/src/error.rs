use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate batch in {op}: channel statistics need at least two elements, got {count}")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("optimizer error: non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("lr range test: {0}")]
    Range(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("weight file checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("report parse error at bytes {start}..{end}: {message}")]
    Parse { start: usize, end: usize, message: String },

    #[error("inpaint error: {0}")]
    Inpaint(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::DegenerateBatch { .. } => "degenerate_batch",
            Error::Label { .. } => "label",
            Error::NonFiniteGradient { .. } => "optimizer",
            Error::Range(_) => "range",
            Error::Argument(_) => "argument",
            Error::Format(_) => "format",
            Error::Checksum { .. } => "checksum",
            Error::Domain { .. } => "domain",
            Error::Parse { .. } => "parse",
            Error::Inpaint(_) => "inpaint",
            Error::Consistency(_) => "consistency",
            Error::Shape(_) => "shape",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Image { .. } => "image",
            Error::Epoch { source, .. } => source.kind(),
        }
    }
}
