//! Backends that need the standard library: the HTTP client, the
//! bounded-concurrency wrapper and an injected-latency mock.

mod concurrent;
pub mod http;

pub use concurrent::{Delayed, Parallel};
pub use http::{HttpConfig, HttpEmbedder, HttpModel};
