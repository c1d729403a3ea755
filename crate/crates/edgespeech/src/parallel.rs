//! Optional two-way parallelism for the bidirectional recurrence.

use edgespeech_core::model::Join;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "EDGESPEECH_THREADS";

/// Thread cap from [`THREADS_ENV`]; 1 when unset or unparsable.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs the two closures on separate threads when more than one thread is
/// allowed, otherwise sequentially on the caller.
#[derive(Debug, Clone, Copy)]
pub struct ThreadJoin {
    threads: usize,
}

impl ThreadJoin {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }

    pub fn from_env() -> Self {
        Self::new(threads_from_env())
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Default for ThreadJoin {
    fn default() -> Self {
        Self::new(1)
    }
}

impl Join for ThreadJoin {
    fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        if self.threads < 2 {
            let ra = a();
            return (ra, b());
        }
        std::thread::scope(|s| {
            let ha = s.spawn(a);
            let rb = b();
            match ha.join() {
                Ok(ra) => (ra, rb),
                Err(panic) => std::panic::resume_unwind(panic),
            }
        })
    }
}
