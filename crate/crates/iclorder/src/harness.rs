//! Experiment execution: every task × method pair runs through a selector,
//! the chosen output is scored against the ground truth, and the records are
//! written as a JSON report plus a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use iclorder_core::eval::score_output;
use iclorder_core::permute::check_cap;
use iclorder_core::{
    aggregate, BigramModel, EmbeddingProvider, EvalRecord, GenParams, HashedTrigramEmbedder, IclTask, LanguageModel,
    LmResponse, Method, MethodSummary, Ordering, ScoreResponse, Selector, Summary, DEFAULT_PERMUTATION_CAP,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backend::http::{ENV_API_KEY, ENV_EMBED_URL};
use crate::backend::{Delayed, HttpConfig, HttpEmbedder, HttpModel, Parallel};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::template_file::load_template;

pub const NO_RECORDS: &str = "no records";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Byte-level bigram model trained on a corpus file.
    Ngram {
        corpus: PathBuf,
        #[serde(default)]
        latency_ms: u64,
    },
    /// OpenAI-compatible completions endpoint.
    Http {
        base_url: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        /// Model used for rescoring; defaults to `model`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scorer_model: Option<String>,
        #[serde(default)]
        allow_mixed: bool,
    },
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedConfig {
    #[default]
    Hashed,
    Http {
        /// Falls back to the completions base URL.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        model: String,
    },
}

/// Whether per-record wall time is measured. `Auto` measures everything
/// except the latency-free reference backend, whose reports are then
/// byte-for-byte reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub template: PathBuf,
    pub methods: Vec<Method>,
    pub shots: usize,
    pub backend: BackendConfig,
    #[serde(default)]
    pub embed: EmbedConfig,
    pub seed: u64,
    pub parallel: usize,
    /// Where the report goes; not part of the echoed configuration.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub permutation_cap: usize,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub timing: Timing,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, template: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        let params = GenParams::default();
        ExperimentConfig {
            dataset: dataset.into(),
            template: template.into(),
            methods: vec![Method::Optiseq],
            shots: 3,
            backend,
            embed: EmbedConfig::Hashed,
            seed: 0,
            parallel: 1,
            out: None,
            permutation_cap: DEFAULT_PERMUTATION_CAP,
            max_tokens: params.max_tokens,
            stop_sequences: params.stop_sequences,
            timing: Timing::Auto,
        }
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams {
            max_tokens: self.max_tokens,
            temperature: 0.0,
            stop_sequences: self.stop_sequences.clone(),
        }
    }

    pub fn timed(&self) -> bool {
        match self.timing {
            Timing::On => true,
            Timing::Off => false,
            Timing::Auto => !matches!(self.backend, BackendConfig::Ngram { latency_ms: 0, .. }),
        }
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        self.gen_params().validate()?;
        check_cap(self.shots, self.permutation_cap)?;
        if let BackendConfig::Http {
            model,
            scorer_model: Some(scorer),
            allow_mixed,
            ..
        } = &self.backend
        {
            if scorer != model && !allow_mixed {
                return Err(Error::Config(format!(
                    "scorer model {scorer:?} differs from generation model {model:?}; pass --allow-mixed to permit this"
                )));
            }
        }
        Ok(())
    }
}

/// Routes generation and rescoring to possibly different models.
struct Routed {
    generator: Box<dyn LanguageModel + Send + Sync>,
    scorer: Option<Box<dyn LanguageModel + Send + Sync>>,
}

impl LanguageModel for Routed {
    fn name(&self) -> String {
        match &self.scorer {
            Some(s) => format!("{} (scorer {})", self.generator.name(), s.name()),
            None => self.generator.name(),
        }
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> iclorder_core::Result<LmResponse> {
        self.generator.generate(prompt, params)
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> iclorder_core::Result<ScoreResponse> {
        self.scorer.as_ref().unwrap_or(&self.generator).score_continuation(prefix, continuation)
    }
}

/// Measures time spent inside backend calls. Batches are timed as a whole,
/// so concurrent calls within a batch are not double-counted.
pub struct Timed<'a, M: ?Sized> {
    inner: &'a M,
    generation_nanos: AtomicU64,
    scoring_nanos: AtomicU64,
    calls: AtomicUsize,
}

impl<'a, M: ?Sized> Timed<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Timed {
            inner,
            generation_nanos: AtomicU64::new(0),
            scoring_nanos: AtomicU64::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn generation_time(&self) -> Duration {
        Duration::from_nanos(self.generation_nanos.load(AtomicOrdering::SeqCst))
    }

    pub fn scoring_time(&self) -> Duration {
        Duration::from_nanos(self.scoring_nanos.load(AtomicOrdering::SeqCst))
    }

    pub fn total_time(&self) -> Duration {
        self.generation_time() + self.scoring_time()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(AtomicOrdering::SeqCst)
    }

    fn timed<T>(&self, counter: &AtomicU64, calls: usize, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        counter.fetch_add(start.elapsed().as_nanos() as u64, AtomicOrdering::SeqCst);
        self.calls.fetch_add(calls, AtomicOrdering::SeqCst);
        out
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Timed<'_, M> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> iclorder_core::Result<LmResponse> {
        self.timed(&self.generation_nanos, 1, || self.inner.generate(prompt, params))
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> iclorder_core::Result<ScoreResponse> {
        self.timed(&self.scoring_nanos, 1, || self.inner.score_continuation(prefix, continuation))
    }

    fn generate_batch(&self, prompts: &[String], params: &GenParams) -> Vec<iclorder_core::Result<LmResponse>> {
        self.timed(&self.generation_nanos, prompts.len(), || self.inner.generate_batch(prompts, params))
    }

    fn score_batch(&self, requests: &[(String, String)]) -> Vec<iclorder_core::Result<ScoreResponse>> {
        self.timed(&self.scoring_nanos, requests.len(), || self.inner.score_batch(requests))
    }
}

type Backend = Parallel<Routed>;

fn build_backend(config: &ExperimentConfig) -> Result<Backend> {
    let routed = match &config.backend {
        BackendConfig::Ngram { corpus, latency_ms } => {
            let bytes = fs::read(corpus).map_err(|e| Error::io(corpus, e))?;
            let label = format!("ngram:{}", corpus.display());
            let model = BigramModel::train(&bytes).with_label(label);
            let generator: Box<dyn LanguageModel + Send + Sync> = if *latency_ms > 0 {
                Box::new(Delayed::new(model, Duration::from_millis(*latency_ms)))
            } else {
                Box::new(model)
            };
            Routed { generator, scorer: None }
        }
        BackendConfig::Http {
            base_url,
            model,
            timeout_secs,
            scorer_model,
            ..
        } => {
            let http = |model: &str| -> Result<Box<dyn LanguageModel + Send + Sync>> {
                let mut cfg = HttpConfig::new(base_url.clone(), model);
                cfg.timeout_secs = *timeout_secs;
                cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
                Ok(Box::new(HttpModel::new(cfg)?))
            };
            let scorer = match scorer_model {
                Some(s) if s != model => Some(http(s)?),
                _ => None,
            };
            Routed {
                generator: http(model)?,
                scorer,
            }
        }
    };
    Ok(Parallel::new(routed, config.parallel))
}

fn build_embedder(config: &ExperimentConfig) -> Result<Box<dyn EmbeddingProvider + Send + Sync>> {
    match &config.embed {
        EmbedConfig::Hashed => Ok(Box::new(HashedTrigramEmbedder)),
        EmbedConfig::Http { base_url, model } => {
            let base = base_url
                .clone()
                .or_else(|| std::env::var(ENV_EMBED_URL).ok())
                .or_else(|| match &config.backend {
                    BackendConfig::Http { base_url, .. } => Some(base_url.clone()),
                    BackendConfig::Ngram { .. } => None,
                })
                .ok_or_else(|| Error::Config("remote embeddings need a base URL".into()))?;
            let mut cfg = HttpConfig::new(base, model.clone());
            cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
            Ok(Box::new(HttpEmbedder::new(cfg)?))
        }
    }
}

/// Records plus their aggregate, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<EvalRecord>,
    pub summary: ReportSummary,
    pub backend: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub total_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub per_method: BTreeMap<String, MethodSummary>,
}

impl ReportSummary {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Ok(ReportSummary {
                total_records: 0,
                note: Some(NO_RECORDS.into()),
                per_method: BTreeMap::new(),
            });
        }
        let Summary {
            total_records,
            per_method,
        } = aggregate(records)?;
        Ok(ReportSummary {
            total_records,
            note: None,
            per_method,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub backend: String,
    pub embedder: String,
    pub summary: ReportSummary,
    pub records: Vec<EvalRecord>,
}

/// Pool indices used for a task: the first `k`, or the `k` most similar to
/// the query when the method ranks by similarity. Returned in pool order.
fn pick_subset<P: EmbeddingProvider + ?Sized>(
    task: &IclTask,
    method: Method,
    shots: usize,
    embedder: &P,
) -> iclorder_core::Result<Vec<usize>> {
    let k = shots.min(task.examples.len());
    if method.uses_similarity() && k < task.examples.len() {
        let mut top = iclorder_core::rank_examples(task, embedder)?;
        top.truncate(k);
        top.sort_unstable();
        Ok(top)
    } else {
        Ok((0..k).collect())
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn run_job<M, P>(
    config: &ExperimentConfig,
    selector: &Selector<'_, M>,
    task: &IclTask,
    task_index: usize,
    method: Method,
    embedder: &P,
    timer: &Timed<'_, Backend>,
) -> iclorder_core::Result<EvalRecord>
where
    M: LanguageModel + ?Sized,
    P: EmbeddingProvider + ?Sized,
{
    let subset = pick_subset(task, method, config.shots, embedder)?;
    let sub_task = task.with_examples(&subset);
    let seed = config.seed.wrapping_add(task_index as u64);
    let result = selector.run(method, &sub_task, embedder, seed)?;
    let chosen = &result.chosen;
    let ordering = Ordering::new(
        chosen.ordering.indices.iter().map(|&i| subset[i]).collect(),
        chosen.ordering.source.clone(),
    );
    let scored = match &task.ground_truth {
        Some(gold) => Some(score_output(task.task_kind, &chosen.output_text, gold)?),
        None => None,
    };
    Ok(EvalRecord {
        task_id: task.id.clone(),
        method,
        ordering: Some(ordering),
        output_text: chosen.output_text.clone(),
        prediction: scored.as_ref().map(|s| s.prediction.clone()).unwrap_or_default(),
        metrics: scored.as_ref().map(|s| s.metrics),
        parse_failure: scored.as_ref().is_some_and(|s| s.parse_failure),
        statistic: result.chosen_score().and_then(finite),
        ordering_scores: result.scores.iter().copied().map(finite).collect(),
        target_label: result.target_label.clone(),
        lm_calls: result.lm_calls,
        wall_ms: if config.timed() {
            timer.total_time().as_secs_f64() * 1000.0
        } else {
            0.0
        },
        error: None,
    })
}

fn failed_record(task: &IclTask, method: Method, error: &iclorder_core::Error, lm_calls: usize) -> EvalRecord {
    EvalRecord {
        task_id: task.id.clone(),
        method,
        ordering: None,
        output_text: String::new(),
        prediction: Vec::new(),
        metrics: None,
        parse_failure: false,
        statistic: None,
        ordering_scores: Vec::new(),
        target_label: None,
        lm_calls,
        wall_ms: 0.0,
        error: Some(error.to_string()),
    }
}

/// Loads inputs and runs every task × method
/// job on `config.parallel` workers. Per-record failures become records;
/// missing log-probability support aborts the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let tasks = load_dataset(&config.dataset)?;
    let template = load_template(&config.template)?;
    let backend = build_backend(config)?;
    let embedder = build_embedder(config)?;
    let params = config.gen_params();
    info!(
        "{} tasks x {} methods on {} (parallel {})",
        tasks.len(),
        config.methods.len(),
        backend.name(),
        config.parallel
    );

    let jobs: Vec<(usize, Method)> = (0..tasks.len())
        .flat_map(|t| config.methods.iter().map(move |&m| (t, m)))
        .collect();
    let slots: Vec<Mutex<Option<EvalRecord>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<iclorder_core::Error>> = Mutex::new(None);

    thread::scope(|scope| {
        for _ in 0..config.parallel.min(jobs.len()) {
            scope.spawn(|| loop {
                if abort.load(AtomicOrdering::SeqCst) {
                    break;
                }
                let j = next.fetch_add(1, AtomicOrdering::SeqCst);
                let Some(&(t, method)) = jobs.get(j) else { break };
                let task = &tasks[t];
                let timer = Timed::new(&backend);
                let selector = Selector::new(&template, params.clone(), &timer).with_cap(config.permutation_cap);
                let record = match run_job(config, &selector, task, t, method, &*embedder, &timer) {
                    Ok(r) => r,
                    Err(e @ iclorder_core::Error::LogprobsUnsupported(_)) => {
                        abort.store(true, AtomicOrdering::SeqCst);
                        fatal.lock().expect("fatal slot poisoned").get_or_insert(e);
                        break;
                    }
                    Err(e) => {
                        warn!("{}/{}: {e}", task.id, method);
                        failed_record(task, method, &e, timer.calls())
                    }
                };
                *slots[j].lock().expect("record slot poisoned") = Some(record);
            });
        }
    });

    if let Some(e) = fatal.into_inner().expect("fatal slot poisoned") {
        return Err(e.into());
    }
    let records: Vec<EvalRecord> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("record slot poisoned").expect("every job ran"))
        .collect();
    let summary = ReportSummary::from_records(&records)?;
    Ok(RunOutput {
        records,
        summary,
        backend: backend.name(),
        embedder: embedder.name(),
    })
}

pub fn build_report(config: &ExperimentConfig, output: RunOutput) -> Report {
    Report {
        config: config.clone(),
        seed: config.seed,
        backend: output.backend,
        embedder: output.embedder,
        summary: output.summary,
        records: output.records,
    }
}

/// Path of the human-readable table written next to a report.
pub fn table_path(report_path: &Path) -> PathBuf {
    let mut name = report_path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "backend:  {}", report.backend);
    let _ = writeln!(out, "embedder: {}", report.embedder);
    let _ = writeln!(out, "seed:     {}", report.seed);
    let _ = writeln!(out, "records:  {}", report.summary.total_records);
    if let Some(note) = &report.summary.note {
        let _ = writeln!(out, "{note}");
        return out;
    }
    let _ = writeln!(
        out,
        "\n{:<10} {:>7} {:>6} {:>6} {:>8} {:>8} {:>8} {:>9} {:>10}",
        "method", "records", "failed", "parse", "acc", "prec", "rec", "lm_calls", "wall_ms"
    );
    for (name, m) in &report.summary.per_method {
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>9.1} {:>10.1}",
            name,
            m.records,
            m.failures,
            m.parse_failures,
            m.accuracy,
            m.mean_precision,
            m.mean_recall,
            m.mean_lm_calls,
            m.mean_wall_ms
        );
    }
    out
}

/// Writes the JSON report and the table at `<path>.txt`.
pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let table = table_path(path);
    fs::write(&table, render_table(report)).map_err(|e| Error::io(&table, e))
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verified {
    /// Aggregates match and every record was re-derived.
    Full { records: usize },
    /// Aggregates match; records were not re-derived.
    AggregatesOnly { notice: String },
}

fn without_timing(r: &EvalRecord) -> EvalRecord {
    EvalRecord {
        wall_ms: 0.0,
        ..r.clone()
    }
}

/// Recomputes the aggregates from the stored records and, for the reference
/// backend, re-runs the experiment and compares every record.
pub fn verify(report: &Report) -> Result<Verified> {
    let recomputed = ReportSummary::from_records(&report.records)?;
    if recomputed != report.summary {
        let diverging: Vec<String> = recomputed
            .per_method
            .keys()
            .chain(report.summary.per_method.keys())
            .filter(|m| recomputed.per_method.get(*m) != report.summary.per_method.get(*m))
            .map(|m| format!("summary/{m}"))
            .collect();
        let mut names = diverging;
        names.dedup();
        if names.is_empty() {
            names.push("summary".into());
        }
        return Err(Error::VerificationMismatch(names));
    }
    if let BackendConfig::Http { .. } = report.config.backend {
        return Ok(Verified::AggregatesOnly {
            notice: "remote backend: aggregates recomputed, log-probabilities not re-derived".into(),
        });
    }
    let rerun = run_experiment(&report.config)?;
    let mut mismatched = Vec::new();
    let pairs = rerun.records.iter().zip(&report.records);
    for (fresh, stored) in pairs {
        if without_timing(fresh) != without_timing(stored) {
            mismatched.push(format!("{}/{}", stored.task_id, stored.method));
        }
    }
    if rerun.records.len() != report.records.len() {
        mismatched.push(format!(
            "record count {} (expected {})",
            report.records.len(),
            rerun.records.len()
        ));
    }
    if !mismatched.is_empty() {
        return Err(Error::VerificationMismatch(mismatched));
    }
    Ok(Verified::Full {
        records: report.records.len(),
    })
}
