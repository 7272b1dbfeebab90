#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use iclorder_core::{BigramModel, GenParams, LanguageModel};
use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request through `handler`.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<(String, Value)>>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&str, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let handler = handler.clone();
                let log = log.clone();
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        MockServer { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<(String, Value)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    log.lock().unwrap().push((path.clone(), value.clone()));
    let (status, text) = handler(&path, &value);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

/// Serves a bigram model through the completions wire format, one byte per
/// token, with offsets and echo support.
pub fn bigram_handler(model: BigramModel) -> impl Fn(&str, &Value) -> (u16, String) + Send + Sync {
    move |_path, body| {
        let prompt = body["prompt"].as_str().unwrap().to_string();
        if body["echo"].as_bool() == Some(true) {
            let bytes = prompt.as_bytes();
            let tokens: Vec<String> = bytes.iter().map(|b| (*b as char).to_string()).collect();
            let logprobs: Vec<Value> = (0..bytes.len())
                .map(|i| if i == 0 { Value::Null } else { json!(model.logprob(bytes[i - 1], bytes[i])) })
                .collect();
            let offsets: Vec<usize> = (0..bytes.len()).collect();
            let payload = json!({"choices": [{"text": prompt, "logprobs": {
                "tokens": tokens, "token_logprobs": logprobs, "text_offset": offsets}}]});
            return (200, payload.to_string());
        }
        let stop: Vec<String> = body["stop"]
            .as_array()
            .map(|a| a.iter().map(|s| s.as_str().unwrap().to_string()).collect())
            .unwrap_or_default();
        let params = GenParams {
            max_tokens: body["max_tokens"].as_u64().unwrap() as usize,
            temperature: 0.0,
            stop_sequences: stop,
        };
        let r = model.generate(&prompt, &params).unwrap();
        let offsets: Vec<usize> = (0..r.tokens.len()).map(|i| prompt.len() + i).collect();
        let payload = json!({"choices": [{"text": r.text, "logprobs": {
            "tokens": r.tokens, "token_logprobs": r.logprobs, "text_offset": offsets}}]});
        (200, payload.to_string())
    }
}
