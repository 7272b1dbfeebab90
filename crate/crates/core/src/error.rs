use alloc::string::String;

/// Everything that can go wrong inside the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("{n}! orderings exceed the permutation cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { message: String, attempts: u32 },

    #[error(
        "backend does not return token log-probabilities; \
         ordering selection cannot run without them: {0}"
    )]
    LogprobsUnsupported(String),

    #[error("tokenizer merged the prefix/continuation boundary at byte {offset}")]
    TokenBoundaryMismatch { offset: usize },

    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm embedding vector")]
    ZeroVector,

    #[error("empty input text")]
    EmptyInput,

    #[error("candidate output is empty")]
    EmptyOutput,

    #[error("every ordering produced an empty output")]
    AllGenerationsEmpty,

    #[error("no API names found in sequence")]
    EmptySequence,

    #[error("gold sequence is empty")]
    EmptyGold,

    #[error("no records to aggregate")]
    EmptyRecordSet,
}

pub type Result<T> = core::result::Result<T, Error>;
