//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure (backend, failed verification),
//! 2 invalid flags, configuration, paths or input files.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use iclorder_core::eval::score_output;
use iclorder_core::{anchored_orderings, enumerate_orderings, Method, TaskKind, DEFAULT_PERMUTATION_CAP};
use serde::Deserialize;

use crate::backend::http::{ENV_BASE_URL, ENV_MODEL, ENV_TIMEOUT};
use crate::error::{Error, Result};
use crate::harness::{
    build_report, emit_report, load_report, render_table, run_experiment, table_path, verify, BackendConfig,
    EmbedConfig, ExperimentConfig, Timing, Verified,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "iclorder", version, about = "Choose the order of few-shot prompt examples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run selection methods over a dataset and write a report.
    Run(RunArgs),
    /// Score one prediction against a gold answer.
    Score(ScoreArgs),
    /// Print the orderings that would be evaluated.
    Perms(PermsArgs),
    /// Re-check a report written by `run`.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ngram,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Hashed,
    Http,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Comma-separated methods, or `all`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Training corpus for the ngram backend.
    #[arg(long, conflicts_with_all = ["base_url", "model", "scorer_model", "allow_mixed", "timeout"])]
    pub corpus: Option<PathBuf>,
    /// Delay added to every ngram backend call.
    #[arg(long, conflicts_with_all = ["base_url", "model", "scorer_model", "allow_mixed", "timeout"])]
    pub latency_ms: Option<u64>,
    /// Completions endpoint; also read from ICLORDER_BASE_URL.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Model name; also read from ICLORDER_MODEL.
    #[arg(long)]
    pub model: Option<String>,
    /// Rescore with a different model (requires --allow-mixed).
    #[arg(long)]
    pub scorer_model: Option<String>,
    #[arg(long)]
    pub allow_mixed: bool,
    /// Request timeout in seconds; also read from ICLORDER_TIMEOUT_SECS.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long, value_enum)]
    pub embed: Option<EmbedKind>,
    #[arg(long)]
    pub embed_model: Option<String>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Report path; a table is also written to `<out>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub permutation_cap: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Stop sequence; repeat for several.
    #[arg(long = "stop")]
    pub stop: Vec<String>,
    #[arg(long, value_enum)]
    pub timing: Option<TimingArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingArg {
    Auto,
    On,
    Off,
}

impl From<TimingArg> for Timing {
    fn from(t: TimingArg) -> Self {
        match t {
            TimingArg::Auto => Timing::Auto,
            TimingArg::On => Timing::On,
            TimingArg::Off => Timing::Off,
        }
    }
}

/// Config-file counterpart of [`RunArgs`].
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    dataset: Option<PathBuf>,
    template: Option<PathBuf>,
    method: Option<MethodList>,
    shots: Option<usize>,
    backend: Option<BackendKind>,
    corpus: Option<PathBuf>,
    latency_ms: Option<u64>,
    base_url: Option<String>,
    model: Option<String>,
    scorer_model: Option<String>,
    allow_mixed: Option<bool>,
    timeout: Option<u64>,
    embed: Option<EmbedKind>,
    embed_model: Option<String>,
    embed_url: Option<String>,
    seed: Option<u64>,
    parallel: Option<usize>,
    out: Option<PathBuf>,
    permutation_cap: Option<usize>,
    max_tokens: Option<usize>,
    stop: Option<Vec<String>>,
    timing: Option<TimingArg>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MethodList {
    One(String),
    Many(Vec<String>),
}

impl MethodList {
    fn joined(&self) -> String {
        match self {
            MethodList::One(s) => s.clone(),
            MethodList::Many(v) => v.join(","),
        }
    }
}

pub fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            methods.extend(Method::ALL);
            continue;
        }
        methods.push(part.to_ascii_lowercase().parse::<Method>().map_err(Error::Config)?);
    }
    let mut seen = Vec::new();
    methods.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    Ok(methods)
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// Merges flags over the config file and environment into a run config.
pub fn resolve_run(args: &RunArgs) -> Result<ExperimentConfig> {
    let file: RunFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunFile::default(),
    };
    let missing = |flag: &str| Error::Config(format!("--{flag} is required (flag or config file)"));

    let dataset = args.dataset.clone().or(file.dataset).ok_or_else(|| missing("dataset"))?;
    let template = args.template.clone().or(file.template).ok_or_else(|| missing("template"))?;
    let methods = match (&args.method, &file.method) {
        (Some(m), _) => parse_methods(m)?,
        (None, Some(m)) => parse_methods(&m.joined())?,
        (None, None) => vec![Method::Optiseq],
    };

    let corpus = args.corpus.clone().or(file.corpus);
    let latency_ms = args.latency_ms.or(file.latency_ms);
    let base_url = args.base_url.clone().or(file.base_url);
    let model = args.model.clone().or(file.model);
    let scorer_model = args.scorer_model.clone().or(file.scorer_model);
    let allow_mixed = args.allow_mixed || file.allow_mixed.unwrap_or(false);
    let timeout = args.timeout.or(file.timeout);
    let http_flags = base_url.is_some() || model.is_some() || scorer_model.is_some() || timeout.is_some();
    let ngram_flags = corpus.is_some() || latency_ms.is_some();

    let kind = match args.backend.or(file.backend) {
        Some(k) => k,
        None if ngram_flags => BackendKind::Ngram,
        None if http_flags || env(ENV_BASE_URL).is_some() => BackendKind::Http,
        None => return Err(missing("backend")),
    };
    let backend = match kind {
        BackendKind::Ngram => {
            if http_flags {
                return Err(Error::Config("HTTP backend options given with --backend ngram".into()));
            }
            BackendConfig::Ngram {
                corpus: corpus.ok_or_else(|| missing("corpus"))?,
                latency_ms: latency_ms.unwrap_or(0),
            }
        }
        BackendKind::Http => {
            if ngram_flags {
                return Err(Error::Config("ngram backend options given with --backend http".into()));
            }
            let timeout_secs = match timeout {
                Some(t) => t,
                None => match env(ENV_TIMEOUT) {
                    Some(t) => t
                        .parse()
                        .map_err(|_| Error::Config(format!("{ENV_TIMEOUT} is not a whole number of seconds")))?,
                    None => 60,
                },
            };
            BackendConfig::Http {
                base_url: base_url.or_else(|| env(ENV_BASE_URL)).ok_or_else(|| missing("base-url"))?,
                model: model.or_else(|| env(ENV_MODEL)).ok_or_else(|| missing("model"))?,
                timeout_secs,
                scorer_model,
                allow_mixed,
            }
        }
    };

    let embed = match args.embed.or(file.embed).unwrap_or(EmbedKind::Hashed) {
        EmbedKind::Hashed => EmbedConfig::Hashed,
        EmbedKind::Http => EmbedConfig::Http {
            base_url: args.embed_url.clone().or(file.embed_url),
            model: args
                .embed_model
                .clone()
                .or(file.embed_model)
                .ok_or_else(|| missing("embed-model"))?,
        },
    };

    let mut config = ExperimentConfig::new(dataset, template, backend);
    config.methods = methods;
    config.embed = embed;
    if let Some(v) = args.shots.or(file.shots) {
        config.shots = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        config.seed = v;
    }
    if let Some(v) = args.parallel.or(file.parallel) {
        config.parallel = v;
    }
    config.out = args.out.clone().or(file.out);
    if let Some(v) = args.permutation_cap.or(file.permutation_cap) {
        config.permutation_cap = v;
    }
    if let Some(v) = args.max_tokens.or(file.max_tokens) {
        config.max_tokens = v;
    }
    if !args.stop.is_empty() {
        config.stop_sequences = args.stop.clone();
    } else if let Some(v) = file.stop {
        config.stop_sequences = v;
    }
    if let Some(v) = args.timing.or(file.timing) {
        config.timing = v.into();
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = resolve_run(args)?;
    let output = run_experiment(&config)?;
    let report = build_report(&config, output);
    match &config.out {
        Some(path) => {
            emit_report(&report, path)?;
            let _ = writeln!(out, "{}", render_table(&report));
            let _ = writeln!(out, "report written to {} and {}", path.display(), table_path(path).display());
        }
        None => {
            let _ = write!(out, "{}", render_table(&report));
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub pred: String,
    #[arg(long, allow_hyphen_values = true)]
    pub gold: String,
    #[arg(long, value_enum, default_value = "sequence")]
    pub kind: KindArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Sequence,
    Classification,
}

fn cmd_score(args: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let kind = match args.kind {
        KindArg::Sequence => TaskKind::SequenceGeneration,
        KindArg::Classification => TaskKind::Classification,
    };
    let scored = score_output(kind, &args.pred, &args.gold)?;
    let m = scored.metrics;
    let _ = writeln!(out, "P {:.2} R {:.2} Acc {:.2}", m.precision, m.recall, m.accuracy);
    if scored.parse_failure {
        let _ = writeln!(out, "note: prediction could not be parsed; scored as zero");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PermsArgs {
    /// Number of examples.
    #[arg(short = 'n', long)]
    pub n: usize,
    /// Examples ranked by similarity, most similar first; the first is fixed
    /// in front.
    #[arg(long, value_delimiter = ',')]
    pub anchor: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATION_CAP)]
    pub cap: usize,
}

fn cmd_perms(args: &PermsArgs, out: &mut dyn Write) -> Result<()> {
    let plan = match &args.anchor {
        Some(ranked) => {
            if ranked.len() != args.n {
                return Err(Error::Config(format!(
                    "--anchor lists {} indices but -n is {}",
                    ranked.len(),
                    args.n
                )));
            }
            anchored_orderings(ranked, args.cap)?
        }
        None => enumerate_orderings(args.n, args.cap)?,
    };
    for ordering in &plan.orderings {
        let _ = writeln!(out, "{}\t{}", ordering.rank(), ordering);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Report written by `run --out`.
    pub report: PathBuf,
}

fn cmd_verify(report: &Path, out: &mut dyn Write) -> Result<()> {
    let loaded = load_report(report)?;
    match verify(&loaded)? {
        Verified::Full { records } => {
            let _ = writeln!(out, "verified: aggregates and {records} records re-derived");
        }
        Verified::AggregatesOnly { notice } => {
            let _ = writeln!(out, "verified: aggregates only");
            let _ = writeln!(out, "notice: {notice}");
        }
    }
    Ok(())
}

fn explain(error: &Error) -> String {
    match error {
        Error::Core(iclorder_core::Error::LogprobsUnsupported(detail)) => format!(
            "{error}\nThe endpoint does not return per-token log-probabilities ({detail}). \
             Ordering selection rescores every candidate with the model's own log-probabilities, \
             so it needs a completions endpoint that supports `logprobs` and `echo`."
        ),
        Error::Core(iclorder_core::Error::CapExceeded { .. }) => {
            format!("{error}\nLower --shots or raise --permutation-cap.")
        }
        Error::Core(iclorder_core::Error::TokenBoundaryMismatch { .. }) => format!(
            "{error}\nStart the template's answer slot with a newline so the tokenizer splits there."
        ),
        _ => error.to_string(),
    }
}

/// Runs one invocation and returns its exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Perms(a) => cmd_perms(a, out),
        Command::Verify(a) => cmd_verify(&a.report, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", explain(&e));
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_FAILURE
            }
        }
    }
}
