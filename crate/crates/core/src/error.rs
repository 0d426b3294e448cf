use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("train-mode batch normalization needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("similarity is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("training diverged: non-finite gradient at parameter {0}")]
    Divergence(usize),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("query has no in-vocabulary tokens")]
    EmptyQuery,
    #[error("query maps to no vocabulary concept")]
    EmptyConceptQuery,
    #[error("ranking loss needs at least 2 pairs in a batch, got {0}")]
    NoNegatives(usize),
    #[error("vocabulary is empty after applying the count and stopword rules")]
    EmptyVocabulary,
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error(
        "non-finite loss in batch {batch}: matching={matching}, classification={classification}"
    )]
    NonFiniteLoss {
        batch: usize,
        matching: f64,
        classification: f64,
    },
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown video id {0}")]
    UnknownVideo(String),
    #[error("vocabulary hash mismatch: expected {expected:016x}, found {found:016x}")]
    VocabularyMismatch { expected: u64, found: u64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
