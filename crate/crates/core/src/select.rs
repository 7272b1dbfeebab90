//! Ordering-selection strategies.
//!
//! `optiseq` generates one candidate per ordering and keeps the candidate
//! whose output is most likely under the example-free prompt. `eoptiseq`
//! does the same over orderings that keep the most similar example first.
//! `topk` and `random` pick a single ordering up front, and `locale` and
//! `influence` choose from label distributions under the full prompt.
//!
//! Ties always go to the lowest plan rank.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{rank_examples, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::lm::{GenParams, LanguageModel};
use crate::permute::{anchored_orderings, check_cap, enumerate_orderings, nth_permutation, DEFAULT_PERMUTATION_CAP};
use crate::prompt::{
    assemble_example_free_prompt, assemble_prompt, Candidate, IclTask, Ordering, OrderingSource, PromptTemplate,
    TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Optiseq,
    Eoptiseq,
    Topk,
    Random,
    Locale,
    Influence,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Optiseq,
        Method::Eoptiseq,
        Method::Topk,
        Method::Random,
        Method::Locale,
        Method::Influence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Optiseq => "optiseq",
            Method::Eoptiseq => "eoptiseq",
            Method::Topk => "topk",
            Method::Random => "random",
            Method::Locale => "locale",
            Method::Influence => "influence",
        }
    }

    /// Whether the method ranks the pool by similarity before choosing shots.
    pub fn uses_similarity(self) -> bool {
        matches!(self, Method::Eoptiseq | Method::Topk)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Outcome of one selection run. `scores[i]` is the decision statistic of
/// `orderings[i]` (example-free log-probability, entropy or influence).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    pub chosen: Candidate,
    pub all_candidates: Vec<Candidate>,
    pub orderings: Vec<Ordering>,
    pub scores: Vec<f64>,
    /// Label whose probability drives the influence statistic.
    pub target_label: Option<String>,
    pub lm_calls: usize,
}

impl SelectionResult {
    /// Decision statistic of the chosen ordering, if the method has one.
    pub fn chosen_score(&self) -> Option<f64> {
        self.orderings
            .iter()
            .position(|o| o.indices == self.chosen.ordering.indices)
            .map(|i| self.scores[i])
    }
}

/// Normalized probabilities over a label set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    /// Raw continuation log-probabilities before renormalization.
    pub logprobs: Vec<f64>,
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn from_logprobs(labels: Vec<String>, logprobs: Vec<f64>) -> Self {
        let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logprobs.iter().map(|lp| libm::exp(lp - max)).collect();
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        LabelDistribution { labels, logprobs, probs }
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }

    /// Label with the highest probability, first label on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * libm::log(p))
        .sum::<f64>()
}

/// Position chosen by the lower-median rule: sort ascending (stable, so ties
/// keep rank order) and take index `(n - 1) / 2`.
pub fn lower_median_index(values: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal));
    order[(values.len() - 1) / 2]
}

/// Deviation of each probability from the mean across orderings.
pub fn influence_scores(probs: &[f64]) -> Vec<f64> {
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    probs.iter().map(|p| p - mean).collect()
}

/// First index holding the maximum; `None` if empty or all `-inf`.
pub fn argmax_lowest_rank(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Sum of the candidate's generation log-probabilities, plus a flag that is
/// set when the output is empty.
pub fn naive_icl_score(candidate: &Candidate) -> (f64, bool) {
    (candidate.gen_logprobs.iter().sum(), candidate.is_empty())
}

/// Log-probability of the candidate output under the example-free prompt.
/// Stores the value in `candidate.phi`.
pub fn phi_score<M: LanguageModel + ?Sized>(
    task: &IclTask,
    template: &PromptTemplate,
    candidate: &mut Candidate,
    backend: &M,
) -> Result<f64> {
    if candidate.output_text.is_empty() {
        return Err(Error::EmptyOutput);
    }
    let prefix = assemble_example_free_prompt(template, task);
    let phi = backend.score_continuation(&prefix, &candidate.output_text)?.total_logprob;
    candidate.phi = Some(phi);
    Ok(phi)
}

/// Renormalized probability of each label as a continuation of `prompt`.
pub fn label_distribution<M: LanguageModel + ?Sized>(
    prompt: &str,
    labels: &[String],
    backend: &M,
) -> Result<LabelDistribution> {
    Ok(label_distributions(&[String::from(prompt)], labels, backend)?.remove(0))
}

/// [`label_distribution`] for several prompts in one batch.
pub fn label_distributions<M: LanguageModel + ?Sized>(
    prompts: &[String],
    labels: &[String],
    backend: &M,
) -> Result<Vec<LabelDistribution>> {
    if labels.is_empty() {
        return Err(Error::InvalidTask("label set is empty".into()));
    }
    if labels.iter().any(|l| l.is_empty()) {
        return Err(Error::InvalidTask("labels must be non-empty".into()));
    }
    let requests: Vec<(String, String)> = prompts
        .iter()
        .flat_map(|p| labels.iter().map(move |l| (p.clone(), l.clone())))
        .collect();
    let mut scores = backend.score_batch(&requests).into_iter();
    let mut out = Vec::with_capacity(prompts.len());
    for _ in prompts {
        let logprobs = scores
            .by_ref()
            .take(labels.len())
            .map(|r| r.map(|s| s.total_logprob))
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabelDistribution::from_logprobs(labels.to_vec(), logprobs));
    }
    Ok(out)
}

/// Runs the selection strategies for one prompt template and backend.
///
/// Generation and scoring go through the backend's batch methods, so a
/// concurrent backend evaluates a whole plan in parallel while results stay
/// keyed by rank.
pub struct Selector<'a, M: ?Sized> {
    template: &'a PromptTemplate,
    params: GenParams,
    cap: usize,
    generator: &'a M,
    scorer: &'a M,
}

impl<'a, M: LanguageModel + ?Sized> Selector<'a, M> {
    pub fn new(template: &'a PromptTemplate, params: GenParams, backend: &'a M) -> Self {
        Selector {
            template,
            params,
            cap: DEFAULT_PERMUTATION_CAP,
            generator: backend,
            scorer: backend,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    /// Scores candidates with a different backend than the one generating them.
    pub fn with_scorer(mut self, scorer: &'a M) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn template(&self) -> &PromptTemplate {
        self.template
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    fn generate(&self, task: &IclTask, orderings: &[Ordering]) -> Result<Vec<Candidate>> {
        let prompts = orderings
            .iter()
            .map(|o| assemble_prompt(self.template, task, o))
            .collect::<Result<Vec<_>>>()?;
        let responses = self.generator.generate_batch(&prompts, &self.params);
        orderings
            .iter()
            .zip(responses)
            .map(|(o, r)| r.map(|resp| Candidate::new(o.clone(), resp.text, resp.tokens, resp.logprobs)))
            .collect()
    }

    /// Fills `phi` for every candidate; empty outputs get `-inf` without a
    /// backend call. Returns the number of scoring calls made.
    fn score_example_free(&self, task: &IclTask, candidates: &mut [Candidate]) -> Result<usize> {
        let prefix = assemble_example_free_prompt(self.template, task);
        let pending: Vec<usize> = (0..candidates.len())
            .filter(|&i| !candidates[i].output_text.is_empty())
            .collect();
        let requests: Vec<(String, String)> = pending
            .iter()
            .map(|&i| (prefix.clone(), candidates[i].output_text.clone()))
            .collect();
        let responses = self.scorer.score_batch(&requests);
        for c in candidates.iter_mut() {
            c.phi = Some(f64::NEG_INFINITY);
        }
        for (&i, r) in pending.iter().zip(responses) {
            candidates[i].phi = Some(r?.total_logprob);
        }
        Ok(requests.len())
    }

    fn generate_and_rescore(&self, method: Method, task: &IclTask, orderings: Vec<Ordering>) -> Result<SelectionResult> {
        self.params.validate()?;
        let mut candidates = self.generate(task, &orderings)?;
        let scorings = self.score_example_free(task, &mut candidates)?;
        let scores: Vec<f64> = candidates.iter().map(|c| c.phi.unwrap_or(f64::NEG_INFINITY)).collect();
        let best = argmax_lowest_rank(&scores).ok_or(Error::AllGenerationsEmpty)?;
        Ok(SelectionResult {
            method,
            chosen: candidates[best].clone(),
            lm_calls: orderings.len() + scorings,
            all_candidates: candidates,
            orderings,
            scores,
            target_label: None,
        })
    }

    /// Evaluates every ordering and keeps the output with the highest
    /// example-free log-probability.
    pub fn optiseq(&self, task: &IclTask) -> Result<SelectionResult> {
        let plan = enumerate_orderings(task.examples.len(), self.cap)?;
        self.generate_and_rescore(Method::Optiseq, task, plan.orderings)
    }

    /// Like [`Selector::optiseq`], restricted to orderings that start with the
    /// example most similar to the query.
    pub fn eoptiseq<P: EmbeddingProvider + ?Sized>(&self, task: &IclTask, embedder: &P) -> Result<SelectionResult> {
        let ranked = rank_examples(task, embedder)?;
        let plan = anchored_orderings(&ranked, self.cap)?;
        self.generate_and_rescore(Method::Eoptiseq, task, plan.orderings)
    }

    fn single(&self, method: Method, task: &IclTask, ordering: Ordering) -> Result<SelectionResult> {
        self.params.validate()?;
        let chosen = self.generate(task, core::slice::from_ref(&ordering))?.remove(0);
        Ok(SelectionResult {
            method,
            all_candidates: alloc::vec![chosen.clone()],
            chosen,
            orderings: Vec::new(),
            scores: Vec::new(),
            target_label: None,
            lm_calls: 1,
        })
    }

    /// Examples in descending similarity to the query.
    pub fn topk<P: EmbeddingProvider + ?Sized>(&self, task: &IclTask, embedder: &P) -> Result<SelectionResult> {
        let ranked = rank_examples(task, embedder)?;
        self.single(Method::Topk, task, Ordering::new(ranked, OrderingSource::Topk))
    }

    /// One ordering drawn uniformly from all permutations.
    pub fn random(&self, task: &IclTask, seed: u64) -> Result<SelectionResult> {
        let ordering = random_ordering(task.examples.len(), seed, self.cap)?;
        self.single(Method::Random, task, ordering)
    }

    /// Labels for the baselines: the task's label space, or for sequence
    /// tasks the distinct non-empty outputs across orderings.
    fn baseline_labels(&self, task: &IclTask, orderings: &[Ordering]) -> Result<(Vec<String>, Option<Vec<Candidate>>)> {
        match task.task_kind {
            TaskKind::Classification => {
                let labels = task
                    .label_space
                    .clone()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::InvalidTask("classification task has no label_space".into()))?;
                Ok((labels, None))
            }
            TaskKind::SequenceGeneration => {
                let candidates = self.generate(task, orderings)?;
                let mut labels: Vec<String> = Vec::new();
                for c in &candidates {
                    if !c.output_text.is_empty() && !labels.contains(&c.output_text) {
                        labels.push(c.output_text.clone());
                    }
                }
                if labels.is_empty() {
                    return Err(Error::AllGenerationsEmpty);
                }
                Ok((labels, Some(candidates)))
            }
        }
    }

    fn baseline(&self, method: Method, task: &IclTask) -> Result<SelectionResult> {
        self.params.validate()?;
        let orderings = enumerate_orderings(task.examples.len(), self.cap)?.orderings;
        let (labels, generated) = self.baseline_labels(task, &orderings)?;
        let prompts = orderings
            .iter()
            .map(|o| assemble_prompt(self.template, task, o))
            .collect::<Result<Vec<_>>>()?;
        let dists = label_distributions(&prompts, &labels, self.scorer)?;
        let mut lm_calls = prompts.len() * labels.len();

        let (scores, pick, target_label) = match method {
            Method::Locale => {
                let entropies: Vec<f64> = dists.iter().map(LabelDistribution::entropy).collect();
                let pick = lower_median_index(&entropies);
                (entropies, pick, None)
            }
            Method::Influence => {
                let target = majority_label(&dists);
                let probs: Vec<f64> = dists.iter().map(|d| d.probs[target]).collect();
                let influences = influence_scores(&probs);
                let pick = argmax_lowest_rank(&influences).unwrap_or(0);
                (influences, pick, Some(labels[target].clone()))
            }
            _ => unreachable!("baseline() only handles locale and influence"),
        };

        let (chosen, all_candidates) = match generated {
            Some(candidates) => {
                lm_calls += candidates.len();
                (candidates[pick].clone(), candidates)
            }
            None => {
                lm_calls += 1;
                let c = self.generate(task, core::slice::from_ref(&orderings[pick]))?.remove(0);
                (c.clone(), alloc::vec![c])
            }
        };
        Ok(SelectionResult {
            method,
            chosen,
            all_candidates,
            orderings,
            scores,
            target_label,
            lm_calls,
        })
    }

    /// Ordering whose label-distribution entropy is the lower median.
    pub fn locale(&self, task: &IclTask) -> Result<SelectionResult> {
        self.baseline(Method::Locale, task)
    }

    /// Ordering that raises the probability of the majority label the most
    /// above its mean across orderings.
    pub fn influence(&self, task: &IclTask) -> Result<SelectionResult> {
        self.baseline(Method::Influence, task)
    }

    /// Dispatches on `method`. `seed` is only used by `random`.
    pub fn run<P: EmbeddingProvider + ?Sized>(
        &self,
        method: Method,
        task: &IclTask,
        embedder: &P,
        seed: u64,
    ) -> Result<SelectionResult> {
        match method {
            Method::Optiseq => self.optiseq(task),
            Method::Eoptiseq => self.eoptiseq(task, embedder),
            Method::Topk => self.topk(task, embedder),
            Method::Random => self.random(task, seed),
            Method::Locale => self.locale(task),
            Method::Influence => self.influence(task),
        }
    }
}

/// Uniform draw over the `n!` lexicographic orderings.
pub fn random_ordering(n: usize, seed: u64, cap: usize) -> Result<Ordering> {
    if n == 0 {
        return Err(Error::InvalidOrdering("cannot order an empty example pool".into()));
    }
    let total = check_cap(n, cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rng.gen_range(0..total);
    let indices = nth_permutation(n, rank).expect("rank below n!");
    Ok(Ordering::new(indices, OrderingSource::Random { seed }))
}

/// Label predicted by the most orderings; ties go to the higher mean
/// probability, then to the earlier label.
pub fn majority_label(dists: &[LabelDistribution]) -> usize {
    let n_labels = dists[0].labels.len();
    let mut votes = alloc::vec![0usize; n_labels];
    let mut mass = alloc::vec![0.0f64; n_labels];
    for d in dists {
        votes[d.argmax()] += 1;
        for (m, p) in mass.iter_mut().zip(&d.probs) {
            *m += p;
        }
    }
    let mut best = 0;
    for i in 1..n_labels {
        if votes[i] > votes[best] || (votes[i] == votes[best] && mass[i] > mass[best]) {
            best = i;
        }
    }
    best
}
