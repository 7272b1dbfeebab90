//! Inference-time ordering of few-shot prompt examples.
//!
//! For a task with `E` in-context examples, each ordering of the examples is
//! turned into a prompt, one candidate output is generated per prompt, and
//! each candidate is rescored by the same model with the examples removed.
//! The candidate with the highest example-free log-probability wins.
//!
//! This crate is `no_std` (it needs `alloc`). Backends plug in through
//! [`lm::LanguageModel`] and [`embed::EmbeddingProvider`]; the crate ships a
//! byte-level bigram model and a hashed-trigram embedder that need no IO.
#![no_std]

extern crate alloc;

pub mod embed;
pub mod error;
pub mod eval;
pub mod lm;
pub mod permute;
pub mod prompt;
pub mod select;

pub use embed::{cosine, rank_examples, EmbeddingProvider, EmbeddingVector, HashedTrigramEmbedder};
pub use error::{Error, Result};
pub use eval::{
    aggregate, classification_score, parse_api_sequence, sequence_metrics, ApiSequence, EvalRecord, MetricTriple,
    MethodSummary, Summary,
};
pub use lm::{BigramModel, CountingModel, GenParams, LanguageModel, LmResponse, ScoreResponse};
pub use permute::{anchored_orderings, enumerate_orderings, OrderingPlan, DEFAULT_PERMUTATION_CAP};
pub use prompt::{
    assemble_example_free_prompt, assemble_prompt, Candidate, Example, IclTask, Ordering, OrderingSource,
    PromptTemplate, TaskKind,
};
pub use select::{LabelDistribution, Method, SelectionResult, Selector};
