use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // generation
    #[error("non-finite state at step {step} while integrating {system}")]
    NonFiniteState { system: String, step: usize },
    #[error("generation failed for class {class} sample {index} after {attempts} attempts")]
    GenerationFailed {
        class: usize,
        index: usize,
        attempts: usize,
    },
    #[error("sample is constant after mean removal (max abs {max_abs:e})")]
    DegenerateSample { max_abs: f64 },
    #[error("corruption window of length {len} exceeds series length {t}")]
    WindowTooLong { len: usize, t: usize },
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    // storage
    #[error("format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: u32, found: u32 },
    #[error("shape mismatch in {what}: expected {expected}, found {actual}")]
    ShapeMismatch {
        what: String,
        expected: String,
        actual: String,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("class {class} has an empty {split} split")]
    EmptyClassSplit { class: usize, split: &'static str },

    // models
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("external scorer handshake failed: {0}")]
    HandshakeFailed(String),
    #[error("external scorer protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("external scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("external scorer failure: {0}")]
    ExternalScorerFailure(String),

    // attribution
    #[error("kernel SHAP regression is singular")]
    SingularRegression,
    #[error("method {method} needs gradients, which scorer {scorer} does not provide")]
    MethodUnsupportedForScorer { method: String, scorer: String },

    // evaluation
    #[error("sample has no positive relevance")]
    NoPositiveRelevance,
    #[error("original score is within 1e-9 of the expectancy ({score} vs {expectancy})")]
    DegenerateReference { score: f64, expectancy: f64 },
    #[error("no quantile pair with a usable TIC difference")]
    NoValidPairs,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of an external scoring process rather than of the
    /// caller's inputs.
    pub fn is_scorer_failure(&self) -> bool {
        matches!(
            self,
            Error::HandshakeFailed(_)
                | Error::ProtocolViolation(_)
                | Error::Timeout(_)
                | Error::ExternalScorerFailure(_)
        )
    }
}
