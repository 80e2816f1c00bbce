//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: bad
//! configuration or malformed input exits 2, solver divergence exits 3,
//! I/O failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands disagree on width/height/channels.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter is outside its documented domain (even support, negative
    /// sigma, p not in the allowed set, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A config file or CLI combination that cannot be acted on.
    #[error("configuration error: {0}")]
    Config(String),

    /// File contents not in a supported format (bad magic, unsupported
    /// PNG layout, truncated float map, ...).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Input that is structurally valid but numerically unusable
    /// (e.g. a constant image where a noise level must be inferred).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The iterative solver produced a non-finite iterate.
    #[error("solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] ::image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 = bad config/input, 3 = divergence,
    /// 4 = I/O, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch(_)
            | Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::UnsupportedFormat(_)
            | Error::DegenerateInput(_) => 2,
            Error::Diverged { .. } => 3,
            Error::Io(_) | Error::Codec(_) => 4,
        }
    }
}
