use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("feature index {index} out of bounds for d={dim} (line {line})")]
    Bounds {
        line: usize,
        index: usize,
        dim: usize,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("stratified split impossible: class {label} has {count} sample(s), need at least 2")]
    Stratification { label: u8, count: usize },

    #[error("no benign donor with at least {min_size} active features")]
    Harvest { min_size: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("attack precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Bounds { .. }
            | Error::Shape { .. }
            | Error::Stratification { .. }
            | Error::Version { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::Harvest { .. } | Error::Training(_) | Error::Precondition(_) => {
                ErrorKind::Runtime
            }
            Error::Stage { source, .. } => source.kind(),
        }
    }
}
