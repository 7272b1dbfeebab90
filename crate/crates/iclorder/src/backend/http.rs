//! Client for OpenAI-compatible `/completions` and `/embeddings` endpoints.
//!
//! Scoring sends `prefix + continuation` with `echo: true`, `max_tokens: 0`
//! and `logprobs` requested, then sums the log-probabilities of the tokens
//! starting at or after the prefix's byte length.

use std::thread;
use std::time::Duration;

use iclorder_core::{EmbeddingProvider, EmbeddingVector, Error, GenParams, LanguageModel, LmResponse, Result, ScoreResponse};
use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ENV_BASE_URL: &str = "ICLORDER_BASE_URL";
pub const ENV_API_KEY: &str = "ICLORDER_API_KEY";
pub const ENV_MODEL: &str = "ICLORDER_MODEL";
pub const ENV_TIMEOUT: &str = "ICLORDER_TIMEOUT_SECS";
pub const ENV_EMBED_URL: &str = "ICLORDER_EMBED_URL";

/// Retries after the first attempt for transient failures.
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
    /// First backoff delay; doubles on every retry.
    #[serde(skip, default = "default_backoff")]
    pub backoff: Duration,
}

fn default_backoff() -> Duration {
    Duration::from_millis(250)
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            timeout_secs: 60,
            api_key: None,
            backoff: default_backoff(),
        }
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

fn client(config: &HttpConfig) -> Result<Client> {
    Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs.max(1)))
        .build()
        .map_err(|e| Error::BackendUnavailable {
            message: e.to_string(),
            attempts: 0,
        })
}

fn post_json(client: &Client, config: &HttpConfig, path: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
    let url = config.endpoint(path);
    let mut delay = config.backoff;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = send_once(client, config, &url, body);
        match outcome {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Transient(message)) if attempts > MAX_RETRIES => {
                return Err(Error::BackendUnavailable { message, attempts });
            }
            Err(Failure::Transient(message)) => {
                warn!("{url}: attempt {attempts} failed ({message}), retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
            }
        }
    }
}

fn send_once(
    client: &Client,
    config: &HttpConfig,
    url: &str,
    body: &serde_json::Value,
) -> std::result::Result<serde_json::Value, Failure> {
    let mut request = client.post(url).json(body);
    if let Some(key) = &config.api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().map_err(|e| Failure::Transient(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| Failure::Transient(e.to_string()))?;
    debug!("{url} -> {status}");
    if status.is_success() {
        return serde_json::from_str(&text).map_err(|e| {
            Failure::Fatal(Error::BackendUnavailable {
                message: format!("malformed response body: {e}"),
                attempts: 1,
            })
        });
    }
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        return Err(Failure::Transient(format!("HTTP {status}: {text}")));
    }
    if text.to_ascii_lowercase().contains("logprob") || text.to_ascii_lowercase().contains("echo") {
        return Err(Failure::Fatal(Error::LogprobsUnsupported(format!("HTTP {status}: {text}"))));
    }
    Err(Failure::Fatal(Error::BackendUnavailable {
        message: format!("HTTP {status}: {text}"),
        attempts: 1,
    }))
}

#[derive(Debug, Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

fn first_choice(body: serde_json::Value) -> Result<(String, Logprobs)> {
    let completion: Completion = serde_json::from_value(body).map_err(|e| Error::BackendUnavailable {
        message: format!("unexpected completion payload: {e}"),
        attempts: 1,
    })?;
    let choice = completion.choices.into_iter().next().ok_or_else(|| Error::BackendUnavailable {
        message: "completion has no choices".into(),
        attempts: 1,
    })?;
    match choice.logprobs {
        Some(lp) if lp.tokens.len() == lp.token_logprobs.len() => Ok((choice.text, lp)),
        _ => Err(Error::LogprobsUnsupported("response carries no per-token logprobs".into())),
    }
}

/// Builds a generation response from a completions payload.
pub fn parse_generation(body: serde_json::Value) -> Result<LmResponse> {
    let (text, lp) = first_choice(body)?;
    let logprobs = lp
        .token_logprobs
        .iter()
        .map(|v| v.ok_or_else(|| Error::LogprobsUnsupported("null logprob on a generated token".into())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LmResponse {
        text,
        tokens: lp.tokens,
        logprobs,
    })
}

/// Extracts the continuation span from an echoed scoring payload.
/// `boundary` is the byte length of the prefix and `end` the byte length of
/// prefix plus continuation.
pub fn parse_scoring(body: serde_json::Value, boundary: usize, end: usize) -> Result<ScoreResponse> {
    let (_, lp) = first_choice(body)?;
    if lp.text_offset.len() != lp.tokens.len() {
        return Err(Error::LogprobsUnsupported("response carries no token offsets".into()));
    }
    let start = lp
        .text_offset
        .iter()
        .position(|&off| off >= boundary)
        .ok_or(Error::TokenBoundaryMismatch { offset: boundary })?;
    if lp.text_offset[start] != boundary {
        return Err(Error::TokenBoundaryMismatch { offset: boundary });
    }
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    for i in start..lp.tokens.len() {
        if lp.text_offset[i] >= end {
            break;
        }
        let value = lp.token_logprobs[i].ok_or_else(|| {
            Error::LogprobsUnsupported("continuation token has no logprob (is the prefix empty?)".into())
        })?;
        tokens.push(lp.tokens[i].clone());
        logprobs.push(value);
    }
    Ok(ScoreResponse::from_tokens(tokens, logprobs))
}

/// Completions endpoint used for both generation and scoring.
#[derive(Debug)]
pub struct HttpModel {
    config: HttpConfig,
    client: Client,
}

impl HttpModel {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = client(&config)?;
        Ok(HttpModel { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl LanguageModel for HttpModel {
    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
        if prompt.is_empty() {
            return Err(Error::EmptyInput);
        }
        params.validate()?;
        let mut body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": 0.0,
            "logprobs": 1,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        parse_generation(post_json(&self.client, &self.config, "completions", &body)?)
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
        if continuation.is_empty() {
            return Err(Error::EmptyInput);
        }
        let full = format!("{prefix}{continuation}");
        let body = json!({
            "model": self.config.model,
            "prompt": full,
            "max_tokens": 0,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 1,
        });
        let payload = post_json(&self.client, &self.config, "completions", &body)?;
        parse_scoring(payload, prefix.len(), full.len())
    }
}

/// Embeddings endpoint.
#[derive(Debug)]
pub struct HttpEmbedder {
    config: HttpConfig,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = client(&config)?;
        Ok(HttpEmbedder { config, client })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyInput);
        }
        let body = json!({ "model": self.config.model, "input": text });
        let payload = post_json(&self.client, &self.config, "embeddings", &body)?;
        let values: Vec<f64> = payload
            .pointer("/data/0/embedding")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| Error::BackendUnavailable {
                message: "embedding payload has no data[0].embedding".into(),
                attempts: 1,
            })?;
        EmbeddingVector::new(values)
    }
}
