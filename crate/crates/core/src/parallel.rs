//! Static work partitioning and the phase runner.
//!
//! Units are split into contiguous, cost-balanced index ranges once, when a
//! system is built. Each phase hands one range to each worker and returns
//! only after every range is done, which is the barrier between phases.
//! Without the `parallel` feature the ranges run one after another on the
//! calling thread; results are identical either way because no unit's
//! computation depends on which worker runs it.

use std::ops::Range;

use crate::error::{ensure, Result};

/// Splits `costs` into at most `parts` contiguous ranges of roughly equal
/// total cost. Empty ranges are dropped.
pub fn partition(costs: &[u64], parts: usize) -> Vec<Range<usize>> {
    let parts = parts.max(1);
    let total: u128 = costs.iter().map(|&c| c as u128).sum();
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    let mut acc: u128 = 0;
    for (i, &c) in costs.iter().enumerate() {
        acc += c as u128;
        let k = ranges.len() as u128 + 1;
        // close the current range once it reaches its share of the total
        if ranges.len() + 1 < parts && acc * parts as u128 >= k * total {
            ranges.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < costs.len() {
        ranges.push(start..costs.len());
    }
    ranges
}

#[derive(Debug)]
pub struct WorkerPool {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        ensure!(workers >= 1, Config, "worker count must be at least 1");
        #[cfg(feature = "parallel")]
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("pvm-worker-{i}"))
                    .build()
                    .map_err(|e| crate::error::PvmError::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(WorkerPool {
            workers,
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f` on every part and returns the results in part order.
    pub fn run<T, R, F>(&self, parts: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| parts.into_par_iter().with_max_len(1).map(&f).collect());
        }
        parts.into_iter().map(f).collect()
    }
}

/// Splits `data` into consecutive mutable chunks of the given lengths.
pub(crate) fn split_by_lengths<'a, T>(mut data: &'a mut [T], lengths: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let (head, tail) = data.split_at_mut(n);
        out.push(head);
        data = tail;
    }
    out
}
