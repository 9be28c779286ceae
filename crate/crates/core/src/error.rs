//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in this crate.
///
/// The variants are grouped by how a caller should react: `Dimension`,
/// `Invalid`, and `IndexOutOfRange` are programming or configuration
/// mistakes; `BlowUp` and `Singular` are numerical outcomes a driver may
/// want to catch and report; `DegreeOverflow` signals that a symbolic
/// bracket computation hit its capacity limit and was aborted rather than
/// silently truncated.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of the supplied objects do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A precondition on the input data failed (non-finite entries, empty
    /// input, a non-positive step size, and so on).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An index referred outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The state norm crossed the blow-up guard during time integration.
    #[error("integration blew up at step {step} (|U| = {norm:.6e}, guard {guard:.1e})")]
    BlowUp { step: usize, norm: f64, guard: f64 },

    /// A linear solve or factorization failed, or a matrix that must be
    /// invertible for the requested operation is numerically singular.
    #[error("singular system: {0}")]
    Singular(String),

    /// A polynomial vector field would exceed the configured degree cap.
    #[error("polynomial degree overflow: bracket would have degree {needed}, cap is {cap}")]
    DegreeOverflow { needed: usize, cap: usize },

    /// A path of an ensemble failed; carries the failing path index.
    #[error("path {path}: {source}")]
    PathFailed {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    /// Text input (a model file) could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure while reading or writing a model file.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable class for this error, used by drivers to map
    /// failures onto exit codes and logs.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "input.dimension",
            Error::Invalid(_) => "input.invalid",
            Error::IndexOutOfRange(_) => "input.index",
            Error::BlowUp { .. } => "integration.blowup",
            Error::Singular(_) => "numeric.singular",
            Error::DegreeOverflow { .. } => "brackets.degree_overflow",
            Error::PathFailed { source, .. } => source.class(),
            Error::Parse { .. } => "parse.model",
            Error::Io(_) => "io",
        }
    }
}
