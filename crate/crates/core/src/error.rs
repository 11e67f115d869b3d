use std::io;

use thiserror::Error;

/// Errors produced by the core library.
///
/// Everything except [`Error::Io`] is a data-contract violation: the inputs
/// were readable but did not satisfy a precondition.
#[derive(Debug, Error)]
pub enum Error {
    #[error("softmax over an empty subset")]
    EmptySubset,
    #[error("every entry is masked to -inf")]
    AllMasked,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for vocabulary of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("head vocabulary is empty")]
    EmptyHead,
    #[error("at least one reference is required")]
    NoReferences,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate reference id `{0}`")]
    DuplicateId(String),
    #[error("unknown reference id `{0}`")]
    UnknownId(String),
    #[error("BLEU candidate is empty")]
    EmptyCandidate,
    #[error("invalid diffusion schedule: {0}")]
    InvalidSchedule(String),
    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("no trace entry for visual `{visual_id}` at step {step}")]
    MissingTraceKey { visual_id: String, step: usize },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scorer failed at step {step}: {source}")]
    Scorer {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid label `{0}` (expected yes or no)")]
    InvalidLabel(String),
    #[error("image `{image_id}` has {count} questions, expected 2")]
    GroupSize { image_id: String, count: usize },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl ToString) -> Self {
        Error::Format {
            what,
            detail: detail.to_string(),
        }
    }

    /// True for failures of the underlying file system rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Scorer { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
