use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scan plan: {0}")]
    Plan(String),

    #[error("invalid EMI source: {0}")]
    Source(String),

    #[error("invalid change event: {0}")]
    Event(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("model was fitted on scan {model:#018x} but dataset is scan {dataset:#018x}")]
    ScanMismatch { model: u64, dataset: u64 },

    #[error("{path}:{line}:{column}: {message}")]
    Config { path: String, line: usize, column: usize, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable code used on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Plan(_) => "E_PLAN",
            Error::Source(_) => "E_SOURCE",
            Error::Event(_) => "E_EVENT",
            Error::Scenario(_) => "E_SCENARIO",
            Error::Shape(_) => "E_SHAPE",
            Error::Training(_) => "E_TRAIN",
            Error::ScanMismatch { .. } => "E_SCAN_MISMATCH",
            Error::Config { .. } => "E_CONFIG",
            Error::BadMagic { .. } => "E_BAD_MAGIC",
            Error::UnsupportedVersion { .. } => "E_VERSION",
            Error::Truncated(_) => "E_TRUNCATED",
            Error::Crc { .. } => "E_CRC",
            Error::Malformed(_) => "E_MALFORMED",
            Error::Io(_) => "E_IO",
        }
    }
}
