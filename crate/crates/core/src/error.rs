use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("token {token} is not a byte token")]
    NonByteToken { token: u32 },

    #[error("canary {index} tokenizes to {len} tokens, need at least {required}")]
    CanaryTooShort {
        index: usize,
        len: usize,
        required: usize,
    },

    #[error("no eligible window of length {window} in corpus")]
    NoEligibleWindow { window: usize },

    #[error("requested {requested} probes but only {available} distinct windows exist")]
    NotEnoughWindows { requested: usize, available: usize },

    #[error("min_len {min_len} is below index window length {n}")]
    MinLenBelowWindow { min_len: usize, n: usize },

    #[error("token {token} outside model vocabulary of size {vocab_size}")]
    VocabMismatch { token: u32, vocab_size: usize },

    #[error("sequence of length {len} exceeds context window {window}")]
    ContextOverflow { len: usize, window: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("corpus of {tokens} tokens is smaller than one batch ({batch_tokens} tokens)")]
    CorpusTooSmall { tokens: usize, batch_tokens: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
