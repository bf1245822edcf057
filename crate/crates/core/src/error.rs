use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed line: {0}")]
    MalformedLine(String),

    #[error("value out of range: {0}")]
    RangeViolation(String),

    #[error("unrecognized trip folder name `{0}`")]
    UnrecognizedFolder(String),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no trajectories found under {0}")]
    EmptyDataset(PathBuf),

    #[error("feature layout mismatch: expected {expected} features, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },

    #[error("too few windows to split: {0}")]
    TooFewWindows(usize),

    #[error("held-out driver {0} has no windows")]
    MissingDriver(String),

    #[error("only one class present ({0} samples)")]
    SingleClass(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch-norm needs at least two values per channel in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),

    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("length mismatch: {0} probabilities vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("cannot compute metrics over zero samples")]
    EmptyEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::ShapeMismatch(_)
            | Error::DegenerateBatch(_)
            | Error::TraceMismatch(_)
            | Error::DomainError(_)
            | Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// The error with any stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
