use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;

use super::{BackendError, GenerationRequest, Generator, Scorer};

/// Counting semaphore bounding the number of requests in flight.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl ConcurrencyLimiter {
    pub fn new(max: usize) -> Self {
        ConcurrencyLimiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Wraps a backend so at most `max` calls run at once.
pub struct Limited<B> {
    inner: B,
    limiter: ConcurrencyLimiter,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max: usize) -> Self {
        Limited {
            inner,
            limiter: ConcurrencyLimiter::new(max),
        }
    }

    pub fn max_concurrency(&self) -> usize {
        self.limiter.max()
    }
}

impl<B: Generator> Generator for Limited<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        self.inner.generate(request)
    }
}

impl<B: Scorer> Scorer for Limited<B> {
    fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        let _permit = self.limiter.acquire();
        self.inner.score_choices(prompt, choices)
    }
}

/// Applies `f` to every item using up to `workers` threads and returns the
/// results in input order.
pub fn bounded_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}
