use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{what} = {value} is outside its domain ({domain})")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file, needed {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label {label} at index {index} exceeds class count {classes}")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u8,
        classes: usize,
    },

    #[error("config file {0} not found")]
    ConfigNotFound(PathBuf),

    #[error("{source_name}:{line}: unknown config key `{key}`")]
    UnknownKey {
        source_name: String,
        line: usize,
        key: String,
    },

    #[error("{source_name}:{line}: cannot parse `{value}` for `{key}`: {reason}")]
    BadValue {
        source_name: String,
        line: usize,
        key: String,
        value: String,
        reason: String,
    },

    #[error("{path}: row {row}: {message}")]
    MalformedCsv { path: PathBuf, row: usize, message: String },

    #[error("{path}: malformed checkpoint at line {line}: {message}")]
    MalformedCheckpoint {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain { what, value, domain }
    }
}
