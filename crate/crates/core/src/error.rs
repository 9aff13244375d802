use thiserror::Error;

/// Errors produced by the library.
///
/// Variants map to the failure categories surfaced by the CLI: everything
/// except [`Error::NumericalFailure`] is an input/usage problem.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension disagreed with what the operation required.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// Structurally invalid input (empty vector, zero rank, bad range, ...).
    #[error("invalid input: {0}")]
    RejectedInput(String),

    /// A word was not found where it was required (embedding table,
    /// parameter store, similarity source, ...).
    #[error("unknown word: {0}")]
    MissingWord(String),

    /// A line of an input file failed to parse.
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    /// A file-level format problem (inconsistent dimensions, empty file, ...).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A model archive failed validation (digest, offsets, dims, truncation).
    #[error("archive integrity error: {0}")]
    Integrity(String),

    /// An objective with no terms: empty batch and no fitting penalty.
    #[error("degenerate objective: empty batch with beta = 0 leaves no terms")]
    DegenerateObjective,

    /// Correlation is undefined (fewer than 3 points, or a constant input).
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// Every item of an evaluation dataset was dropped.
    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    /// Training produced a non-finite quantity.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable category name, used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NumericalFailure(_) => "numerical",
            Error::DimensionMismatch { .. } | Error::RejectedInput(_) => "usage",
            Error::MissingWord(_)
            | Error::Parse { .. }
            | Error::Format { .. }
            | Error::Integrity(_)
            | Error::Io(_) => "data",
            Error::DegenerateObjective
            | Error::UndefinedCorrelation(_)
            | Error::EmptyEvaluation(_) => "usage",
        }
    }
}
