use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto a stable machine-readable category (see
/// [`Error::category`]) that the CLI prints and the FFI layer converts into an
/// integer code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds context length {context_len}")]
    SequenceTooLong { len: usize, context_len: usize },
    #[error("token id {token} is out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("prompt must contain at least one token")]
    EmptyPrompt,
    #[error("backward called without any recorded forward pass")]
    NoRecordedForward,
    #[error("shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: u64, total_steps: u64 },
    #[error("models do not share a vocabulary ({0} vs {1})")]
    VocabularyMismatch(String, String),
    #[error("unknown language id {0}")]
    UnknownLanguage(usize),
    #[error("prompt cannot be decoded into a task: {0}")]
    UndecodablePrompt(String),
    #[error("empty pool: {0}")]
    EmptyPool(String),
    #[error("pool of {0} responses is too small to form a pair")]
    PoolTooSmall(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("evaluation prompt {0} also appears in the training set")]
    PromptOverlap(u64),
    #[error("stage `{stage}` requires `{missing}` to be completed first")]
    StageOrder { stage: String, missing: String },
    #[error("config hash mismatch for `{stage}`: artifacts were made with {found}, current config is {expected}")]
    ConfigHashMismatch {
        stage: String,
        found: String,
        expected: String,
    },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("path {0} escapes the run directory")]
    PathOutsideRun(PathBuf),
    #[error("gradient check failed for {what}: relative error {worst:e} exceeds {tolerance:e}")]
    GradientMismatch { what: String, worst: f64, tolerance: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable kebab-case category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::SequenceTooLong { .. } => "sequence-too-long",
            Error::TokenOutOfRange { .. } => "token-out-of-range",
            Error::EmptyPrompt => "empty-prompt",
            Error::NoRecordedForward => "no-recorded-forward",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::StepOutOfRange { .. } => "step-out-of-range",
            Error::VocabularyMismatch(..) => "vocabulary-mismatch",
            Error::UnknownLanguage(_) => "unknown-language",
            Error::UndecodablePrompt(_) => "undecodable-prompt",
            Error::EmptyPool(_) => "empty-pool",
            Error::PoolTooSmall(_) => "pool-too-small",
            Error::EmptyBatch => "empty-batch",
            Error::EmptyDataset => "empty-dataset",
            Error::MalformedRecord { .. } => "malformed-record",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::PromptOverlap(_) => "prompt-overlap",
            Error::StageOrder { .. } => "stage-order",
            Error::ConfigHashMismatch { .. } => "config-hash-mismatch",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::PathOutsideRun(_) => "path-outside-run",
            Error::GradientMismatch { .. } => "gradient-mismatch",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code / FFI status code for this error. Zero is reserved
    /// for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::SequenceTooLong { .. } => 3,
            Error::TokenOutOfRange { .. } => 4,
            Error::EmptyPrompt => 5,
            Error::NoRecordedForward => 6,
            Error::ShapeMismatch { .. } => 7,
            Error::NonFinite(_) => 8,
            Error::StepOutOfRange { .. } => 9,
            Error::VocabularyMismatch(..) => 10,
            Error::UnknownLanguage(_) => 11,
            Error::UndecodablePrompt(_) => 12,
            Error::EmptyPool(_) => 13,
            Error::PoolTooSmall(_) => 14,
            Error::EmptyBatch => 15,
            Error::EmptyDataset => 16,
            Error::MalformedRecord { .. } => 17,
            Error::VersionMismatch { .. } => 18,
            Error::PromptOverlap(_) => 19,
            Error::StageOrder { .. } => 20,
            Error::ConfigHashMismatch { .. } => 21,
            Error::MissingArtifact(_) => 22,
            Error::PathOutsideRun(_) => 23,
            Error::Io { .. } => 24,
            Error::GradientMismatch { .. } => 25,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
