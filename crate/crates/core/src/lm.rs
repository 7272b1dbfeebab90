//! Language-model backends: the [`LanguageModel`] trait, a call-counting
//! wrapper, and the byte-level bigram reference model.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoding parameters. Only greedy decoding is supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: 64,
            temperature: 0.0,
            stop_sequences: vec!["\n".into()],
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidTask("max_tokens must be at least 1".into()));
        }
        if self.temperature != 0.0 {
            return Err(Error::InvalidTask("only greedy decoding (temperature 0) is supported".into()));
        }
        Ok(())
    }
}

/// A generated continuation with one log-probability (nats) per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

/// Log-probability of a fixed continuation given a prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub total_logprob: f64,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl ScoreResponse {
    pub fn from_tokens(tokens: Vec<String>, logprobs: Vec<f64>) -> Self {
        ScoreResponse {
            total_logprob: logprobs.iter().sum(),
            tokens,
            logprobs,
        }
    }
}

/// A backend that can greedily generate and score continuations.
///
/// The batch methods return results in request order. The defaults run
/// requests one after another; concurrent backends override them.
pub trait LanguageModel {
    /// Backend identity recorded in reports.
    fn name(&self) -> String;

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse>;

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse>;

    fn generate_batch(&self, prompts: &[String], params: &GenParams) -> Vec<Result<LmResponse>> {
        prompts.iter().map(|p| self.generate(p, params)).collect()
    }

    fn score_batch(&self, requests: &[(String, String)]) -> Vec<Result<ScoreResponse>> {
        requests
            .iter()
            .map(|(prefix, continuation)| self.score_continuation(prefix, continuation))
            .collect()
    }
}

macro_rules! forward_model {
    ($ty:ty) => {
        impl<M: LanguageModel + ?Sized> LanguageModel for $ty {
            fn name(&self) -> String {
                (**self).name()
            }
            fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
                (**self).generate(prompt, params)
            }
            fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
                (**self).score_continuation(prefix, continuation)
            }
            fn generate_batch(&self, prompts: &[String], params: &GenParams) -> Vec<Result<LmResponse>> {
                (**self).generate_batch(prompts, params)
            }
            fn score_batch(&self, requests: &[(String, String)]) -> Vec<Result<ScoreResponse>> {
                (**self).score_batch(requests)
            }
        }
    };
}

forward_model!(&M);
forward_model!(Box<M>);
forward_model!(Arc<M>);

/// Counts every generation and scoring request that reaches the inner model.
#[derive(Debug, Default)]
pub struct CountingModel<M> {
    inner: M,
    generations: AtomicUsize,
    scorings: AtomicUsize,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        CountingModel {
            inner,
            generations: AtomicUsize::new(0),
            scorings: AtomicUsize::new(0),
        }
    }

    pub fn generations(&self) -> usize {
        self.generations.load(AtomicOrdering::SeqCst)
    }

    pub fn scorings(&self) -> usize {
        self.scorings.load(AtomicOrdering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.generations() + self.scorings()
    }

    pub fn reset(&self) {
        self.generations.store(0, AtomicOrdering::SeqCst);
        self.scorings.store(0, AtomicOrdering::SeqCst);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: LanguageModel> LanguageModel for CountingModel<M> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
        self.generations.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.generate(prompt, params)
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
        self.scorings.fetch_add(1, AtomicOrdering::SeqCst);
        self.inner.score_continuation(prefix, continuation)
    }

    fn generate_batch(&self, prompts: &[String], params: &GenParams) -> Vec<Result<LmResponse>> {
        self.generations.fetch_add(prompts.len(), AtomicOrdering::SeqCst);
        self.inner.generate_batch(prompts, params)
    }

    fn score_batch(&self, requests: &[(String, String)]) -> Vec<Result<ScoreResponse>> {
        self.scorings.fetch_add(requests.len(), AtomicOrdering::SeqCst);
        self.inner.score_batch(requests)
    }
}

const ALPHABET: usize = 256;

/// Context byte used when the prefix is empty.
pub const START_BYTE: u8 = 0;

/// Byte-level bigram model with add-one smoothing:
/// `P(b | a) = (count(a, b) + 1) / (count(a, .) + 256)`.
///
/// Tokens are single bytes. Greedy generation picks the most frequent
/// successor, lowest byte on ties, and ends early if that byte is not ASCII
/// so the output stays valid UTF-8.
#[derive(Clone)]
pub struct BigramModel {
    counts: Vec<u32>,
    row_totals: Vec<u64>,
    label: String,
}

impl core::fmt::Debug for BigramModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("BigramModel")
            .field("label", &self.label)
            .field("pairs", &self.row_totals.iter().sum::<u64>())
            .finish()
    }
}

impl BigramModel {
    /// Counts every adjacent byte pair of `corpus`.
    pub fn train(corpus: &[u8]) -> Self {
        let mut counts = vec![0u32; ALPHABET * ALPHABET];
        let mut row_totals = vec![0u64; ALPHABET];
        for pair in corpus.windows(2) {
            counts[pair[0] as usize * ALPHABET + pair[1] as usize] += 1;
            row_totals[pair[0] as usize] += 1;
        }
        BigramModel {
            counts,
            row_totals,
            label: String::from("reference-bigram"),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn count(&self, prev: u8, next: u8) -> u32 {
        self.counts[prev as usize * ALPHABET + next as usize]
    }

    pub fn logprob(&self, prev: u8, next: u8) -> f64 {
        let numerator = self.count(prev, next) as f64 + 1.0;
        let denominator = self.row_totals[prev as usize] as f64 + ALPHABET as f64;
        libm::log(numerator / denominator)
    }

    fn argmax_successor(&self, prev: u8) -> u8 {
        let row = &self.counts[prev as usize * ALPHABET..(prev as usize + 1) * ALPHABET];
        let mut best = 0usize;
        for (b, &c) in row.iter().enumerate() {
            if c > row[best] {
                best = b;
            }
        }
        best as u8
    }
}

impl LanguageModel for BigramModel {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
        if prompt.is_empty() {
            return Err(Error::EmptyInput);
        }
        params.validate()?;
        let mut prev = *prompt.as_bytes().last().expect("non-empty prompt");
        let mut text = String::new();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < params.max_tokens {
            let next = self.argmax_successor(prev);
            if !next.is_ascii() {
                break;
            }
            text.push(next as char);
            tokens.push((next as char).to_string());
            logprobs.push(self.logprob(prev, next));
            prev = next;
            if let Some(stop) = params
                .stop_sequences
                .iter()
                .find(|s| !s.is_empty() && text.ends_with(s.as_str()))
            {
                let keep = text.len() - stop.len();
                text.truncate(keep);
                tokens.truncate(keep);
                logprobs.truncate(keep);
                break;
            }
        }
        Ok(LmResponse { text, tokens, logprobs })
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
        if continuation.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut prev = prefix.as_bytes().last().copied().unwrap_or(START_BYTE);
        let mut tokens = Vec::with_capacity(continuation.len());
        let mut logprobs = Vec::with_capacity(continuation.len());
        for &b in continuation.as_bytes() {
            logprobs.push(self.logprob(prev, b));
            tokens.push(byte_token(b));
            prev = b;
        }
        Ok(ScoreResponse::from_tokens(tokens, logprobs))
    }
}

fn byte_token(b: u8) -> String {
    if b.is_ascii() {
        (b as char).to_string()
    } else {
        format!("<0x{b:02X}>")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bigram_generates_argmax_successor() {
        // pairs in "ababab": ab x3, ba x2, so 'a' -> 'b'
        let model = BigramModel::train(b"ababab");
        let out = model
            .generate("a", &GenParams { max_tokens: 1, temperature: 0.0, stop_sequences: vec![] })
            .unwrap();
        assert_eq!(out.text, "b");
        assert_eq!(out.tokens, vec!["b".to_string()]);
        let expected = libm::log(4.0 / 259.0);
        assert!((out.logprobs[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn generation_truncates_at_max_tokens() {
        let model = BigramModel::train(b"ababab");
        let params = GenParams { max_tokens: 3, temperature: 0.0, stop_sequences: vec![] };
        let out = model.generate("xyz a", &params).unwrap();
        assert_eq!(out.text, "bab");
        assert!(out.tokens.len() <= 3);
        assert_eq!(out.tokens.concat(), out.text);
    }

    #[test]
    fn generation_stops_before_stop_sequence() {
        // '>' is followed by '>' twice and by '\n' once
        let model = BigramModel::train(b"xA, B>>>\n");
        let params = GenParams { max_tokens: 32, temperature: 0.0, stop_sequences: vec![">>".into()] };
        let out = model.generate("Sequence: x", &params).unwrap();
        assert!(!out.text.contains(">>"));
        assert_eq!(out.text, "A, B");
        assert_eq!(out.tokens.len(), out.logprobs.len());
        assert_eq!(out.tokens.concat(), out.text);
    }

    #[test]
    fn ties_pick_lowest_byte_and_non_ascii_ends_generation() {
        let model = BigramModel::train(b"");
        let params = GenParams { max_tokens: 2, temperature: 0.0, stop_sequences: vec![] };
        assert_eq!(model.generate("q", &params).unwrap().text, "\0\0");

        let model = BigramModel::train("qé".as_bytes());
        assert_eq!(model.generate("q", &params).unwrap().text, "");
    }

    #[test]
    fn uniform_model_scores_log_inverse_alphabet() {
        let model = BigramModel::train(b"");
        let s = model.score_continuation("prefix", "hello").unwrap();
        assert!((s.total_logprob - 5.0 * libm::log(1.0 / 256.0)).abs() < 1e-12);
        assert_eq!(s.tokens.len(), 5);
    }

    #[test]
    fn empty_inputs_rejected() {
        let model = BigramModel::train(b"abc");
        assert_eq!(model.score_continuation("a", ""), Err(Error::EmptyInput));
        assert_eq!(model.generate("", &GenParams::default()), Err(Error::EmptyInput));
        let bad = GenParams { temperature: 0.7, ..GenParams::default() };
        assert!(model.generate("a", &bad).is_err());
        let bad = GenParams { max_tokens: 0, ..GenParams::default() };
        assert!(model.generate("a", &bad).is_err());
    }

    #[test]
    fn counting_wrapper_counts_batches() {
        let model = CountingModel::new(BigramModel::train(b"abc"));
        let prompts = vec!["a".to_string(), "b".to_string()];
        let _ = model.generate_batch(&prompts, &GenParams::default());
        let _ = model.score_continuation("a", "b");
        assert_eq!(model.generations(), 2);
        assert_eq!(model.scorings(), 1);
        assert_eq!(model.total(), 3);
    }

    proptest! {
        #[test]
        fn chain_rule_additivity(corpus in "[a-d ]{0,64}", p in "[a-d]{0,6}", c1 in "[a-d ]{1,6}", c2 in "[a-d ]{1,6}") {
            let model = BigramModel::train(corpus.as_bytes());
            let whole = model.score_continuation(&p, &alloc::format!("{c1}{c2}")).unwrap().total_logprob;
            let first = model.score_continuation(&p, &c1).unwrap().total_logprob;
            let second = model.score_continuation(&alloc::format!("{p}{c1}"), &c2).unwrap().total_logprob;
            prop_assert!((whole - (first + second)).abs() < 1e-9);
        }

        #[test]
        fn logprobs_nonpositive_and_totals_decrease(corpus in "[a-c]{0,40}", c in "[a-c]{1,12}") {
            let model = BigramModel::train(corpus.as_bytes());
            let mut last = 0.0f64;
            for end in 1..=c.len() {
                let s = model.score_continuation("a", &c[..end]).unwrap();
                prop_assert!(s.logprobs.iter().all(|&lp| lp <= 0.0));
                prop_assert!(s.total_logprob <= last);
                last = s.total_logprob;
            }
        }

        #[test]
        fn generation_is_deterministic(corpus in "[a-e\n]{0,60}", prompt in "[a-e]{1,5}") {
            let model = BigramModel::train(corpus.as_bytes());
            let params = GenParams::default();
            prop_assert_eq!(model.generate(&prompt, &params), model.generate(&prompt, &params));
        }
    }
}
