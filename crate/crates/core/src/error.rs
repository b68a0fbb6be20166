//! Error taxonomy shared by the whole crate.
//!
//! Every error carries a category so callers (notably the CLI) can map
//! failures to stable exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural misuse: mismatched shapes, unknown presets, invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad runtime data: out-of-range labels, empty datasets, degenerate inputs.
    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file that is not a checkpoint container at all.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint container that is damaged (truncation, CRC mismatch).
    #[error("corruption error: {0}")]
    Corruption(String),

    /// A valid checkpoint that does not match what the caller asked for.
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    /// Non-finite values or solver breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Failures raised by the training loop itself.
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    /// Stable process exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Io(_) => 4,
            Error::Format(_) => 5,
            Error::Corruption(_) => 6,
            Error::Incompatible(_) => 7,
            Error::Numeric(_) => 8,
            Error::Training(_) => 9,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Incompatible(_) => "incompatible",
            Error::Numeric(_) => "numeric",
            Error::Training(_) => "training",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
