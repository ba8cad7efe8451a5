//! Opt-in data parallelism for per-image work.
//!
//! Every parallel map collects results in input order and each item is
//! computed independently, so output does not depend on the thread count.

use rayon::prelude::*;

/// Environment variable capping worker threads. `0` or unset means the
/// calling thread does all the work.
pub const THREADS_ENV: &str = "DTJRD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Parallelism {
    threads: usize,
}

impl Parallelism {
    pub const SERIAL: Parallelism = Parallelism { threads: 0 };

    pub fn new(threads: usize) -> Self {
        Self { threads }
    }

    /// Reads [`THREADS_ENV`]; unparsable values fall back to serial.
    pub fn from_env() -> Self {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().unwrap_or_else(|_| {
                log::warn!("ignoring {THREADS_ENV}={v:?}; running single-threaded");
                0
            }),
            Err(_) => 0,
        };
        Self { threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn map<A, R, F>(&self, items: &[A], f: F) -> Vec<R>
    where
        A: Sync,
        R: Send,
        F: Fn(&A) -> R + Sync + Send,
    {
        if self.threads <= 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
        {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); running single-threaded");
                items.iter().map(f).collect()
            }
        }
    }
}
