//! Crate-wide error type with a coarse category used by callers that need to
//! map failures onto process exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that is degenerate for the requested operation, e.g. a
    /// zero-norm vector handed to a normalizer or an empty batch.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value or configuration that violates a documented invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value appeared where the math guarantees a finite one.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed text data; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {detail}")]
    CsvParse { line: usize, detail: String },

    /// Malformed checkpoint; `offset` is the byte position of the failure.
    #[error("checkpoint parse error at byte {offset}: {detail}")]
    CheckpointParse { offset: u64, detail: String },

    /// Wraps an error with the training iteration it occurred in.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::DegenerateInput(_) | Error::ShapeMismatch(_) | Error::InvalidInput(_) => {
                ErrorCategory::Validation
            }
            Error::NumericalFailure(_) => ErrorCategory::Numerical,
            Error::Io(_) | Error::CsvParse { .. } | Error::CheckpointParse { .. } => {
                ErrorCategory::Io
            }
            Error::AtIteration { source, .. } => source.category(),
        }
    }

    pub(crate) fn at_iteration(self, iteration: u64) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_map_as_documented() {
        assert_eq!(
            Error::DegenerateInput("x".into()).category(),
            ErrorCategory::Validation
        );
        assert_eq!(
            Error::NumericalFailure("x".into()).category(),
            ErrorCategory::Numerical
        );
        assert_eq!(
            Error::CsvParse {
                line: 3,
                detail: "x".into()
            }
            .category(),
            ErrorCategory::Io
        );
    }

    #[test]
    fn iteration_wrapper_keeps_inner_category() {
        let err = Error::NumericalFailure("bad".into()).at_iteration(17);
        assert_eq!(err.category(), ErrorCategory::Numerical);
        assert!(err.to_string().contains("iteration 17"));
    }
}
