use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("orbit diverged at iteration {index}: non-finite state")]
    DivergentOrbit { index: usize },

    #[error("ratio x(0)/y(0) is undefined for this orbit")]
    RatioUndefined,

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("recovered {what} is not a bijection; the oracle keystream changed between queries")]
    NonBijectiveRecovery { what: String },

    #[error("codebook row for pixel {pixel} is not a bijection")]
    CodebookInconsistent { pixel: usize },

    #[error("recovered key failed to decrypt {failed} known plaintexts")]
    VerificationFailed { failed: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("image format error: {0}")]
    Format(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("stage {stage} failed after {queries} queries: {source}")]
    Stage {
        stage: &'static str,
        queries: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
