use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth image has no nonzero pixel (no hand present)")]
    AllZeroImage,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("content bounding box {content_w}x{content_h} exceeds target {target_w}x{target_h}")]
    ContentLargerThanTarget {
        content_w: usize,
        content_h: usize,
        target_w: usize,
        target_h: usize,
    },

    #[error("wrong input size: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    WrongInputSize {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("empty training data")]
    EmptyData,

    #[error("label index {0} is outside the 24-class set")]
    LabelOutOfRange(usize),

    #[error("unknown letter {letter:?}{}", row_suffix(*.row))]
    UnknownLetter { letter: String, row: Option<usize> },

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("manifest row {row}: missing file {}", path.display())]
    MissingFile { row: usize, path: PathBuf },

    #[error("length mismatch: {left} predictions vs {right} truths")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at manifest row {r}"),
        None => String::new(),
    }
}

impl Error {
    pub fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 usage/config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::NonFinite(_) => 4,
            _ => 3,
        }
    }
}

pub trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.into().context(context()))
    }
}
