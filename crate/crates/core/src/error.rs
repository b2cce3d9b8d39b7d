use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bad file format: {0}")]
    Format(String),
    #[error("truncated data: {0}")]
    Truncated(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("missing label: {0}")]
    Missing(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ids not found in label table: {}", .0.join(", "))]
    Join(Vec<String>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of the work that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any [`Error::Context`] layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Format(_) => "FormatError",
            Error::Truncated(_) => "TruncatedError",
            Error::Empty(_) => "EmptyError",
            Error::Value(_) => "ValueError",
            Error::Missing(_) => "MissingError",
            Error::DuplicateId(_) => "DuplicateIdError",
            Error::Schema(_) => "SchemaError",
            Error::Join(_) => "JoinError",
            Error::Config(_) => "ConfigError",
            Error::Shape(_) => "ShapeError",
            Error::Divergence(_) => "DivergenceError",
            Error::Numeric(_) => "NumericError",
            Error::Lookup(_) => "LookupError",
            Error::Io { .. } => "IoError",
            Error::Context { .. } => unreachable!(),
        }
    }
}
