use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use iclorder_core::{GenParams, LanguageModel, LmResponse, Result, ScoreResponse};

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    ready: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            ready: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock poisoned");
        while *free == 0 {
            free = self.ready.wait(free).expect("permit lock poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock poisoned") += 1;
        self.0.ready.notify_one();
    }
}

/// Runs batch requests on worker threads with at most `parallelism` calls in
/// flight across every caller sharing this value. Results keep request order.
#[derive(Debug)]
pub struct Parallel<M> {
    inner: M,
    parallelism: usize,
    permits: Permits,
}

impl<M> Parallel<M> {
    pub fn new(inner: M, parallelism: usize) -> Self {
        let parallelism = parallelism.max(1);
        Parallel {
            inner,
            parallelism,
            permits: Permits::new(parallelism),
        }
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

fn fan_out<T: Send, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R>
where
    T: Sync,
{
    if items.len() <= 1 || workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot poisoned").expect("every slot filled"))
        .collect()
}

impl<M: LanguageModel + Sync> LanguageModel for Parallel<M> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
        let _permit = self.permits.acquire();
        self.inner.generate(prompt, params)
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
        let _permit = self.permits.acquire();
        self.inner.score_continuation(prefix, continuation)
    }

    fn generate_batch(&self, prompts: &[String], params: &GenParams) -> Vec<Result<LmResponse>> {
        fan_out(prompts, self.parallelism, |p| self.generate(p, params))
    }

    fn score_batch(&self, requests: &[(String, String)]) -> Vec<Result<ScoreResponse>> {
        fan_out(requests, self.parallelism, |(p, c)| self.score_continuation(p, c))
    }
}

/// Adds a fixed delay before every call; stands in for a remote endpoint.
#[derive(Debug, Clone)]
pub struct Delayed<M> {
    inner: M,
    latency: Duration,
}

impl<M> Delayed<M> {
    pub fn new(inner: M, latency: Duration) -> Self {
        Delayed { inner, latency }
    }
}

impl<M: LanguageModel> LanguageModel for Delayed<M> {
    fn name(&self) -> String {
        format!("{}+latency{}ms", self.inner.name(), self.latency.as_millis())
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<LmResponse> {
        thread::sleep(self.latency);
        self.inner.generate(prompt, params)
    }

    fn score_continuation(&self, prefix: &str, continuation: &str) -> Result<ScoreResponse> {
        thread::sleep(self.latency);
        self.inner.score_continuation(prefix, continuation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use iclorder_core::BigramModel;
    use std::time::Instant;

    #[test]
    fn batch_results_keep_request_order() {
        let model = Parallel::new(BigramModel::train(b"a1\nb2\nc3\n"), 3);
        let prompts: Vec<String> = ["a", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
        let out: Vec<String> = model
            .generate_batch(&prompts, &GenParams::default())
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(out, vec!["1", "2", "3", "1"]);
    }

    #[test]
    fn in_flight_calls_are_bounded() {
        struct Probe {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl LanguageModel for Probe {
            fn name(&self) -> String {
                "probe".into()
            }
            fn generate(&self, _: &str, _: &GenParams) -> Result<LmResponse> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(20));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok(LmResponse { text: String::new(), tokens: vec![], logprobs: vec![] })
            }
            fn score_continuation(&self, _: &str, _: &str) -> Result<ScoreResponse> {
                unimplemented!()
            }
        }
        let model = Parallel::new(Probe { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) }, 2);
        let prompts: Vec<String> = (0..8).map(|i| i.to_string()).collect();
        // two callers share the same two permits
        thread::scope(|s| {
            s.spawn(|| model.generate_batch(&prompts, &GenParams::default()));
            s.spawn(|| model.generate_batch(&prompts, &GenParams::default()));
        });
        assert_eq!(model.inner().peak.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn delayed_batch_runs_concurrently() {
        let model = Parallel::new(Delayed::new(BigramModel::train(b"ab"), Duration::from_millis(50)), 4);
        let prompts: Vec<String> = (0..4).map(|_| "a".to_string()).collect();
        let start = Instant::now();
        let _ = model.generate_batch(&prompts, &GenParams::default());
        assert!(start.elapsed() < Duration::from_millis(100));
    }
}
