//! Batch execution for embarrassingly parallel Monte Carlo work.
//!
//! Work is split into fixed index ranges; each batch is computed
//! independently (sample RNGs are derived from global indices, never shared)
//! and the per-batch outputs are collected in batch order. Reductions over
//! those outputs therefore see the same operand order whether the batches ran
//! on one thread or sixteen, which is what makes results bitwise stable.
//!
//! With the `parallel` feature disabled, everything runs sequentially through
//! the same code path.

use std::ops::Range;

/// How to schedule batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    /// Use the rayon global pool (or sequential when the feature is off).
    Auto,
    /// Force single-threaded execution.
    Sequential,
    /// A dedicated pool with this many threads.
    Threads(usize),
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::Auto
    }
}

pub const DEFAULT_BATCH: u64 = 4096;

fn batch_ranges(n_items: u64, batch_size: u64) -> Vec<Range<u64>> {
    assert!(batch_size > 0);
    let mut out = Vec::with_capacity(((n_items + batch_size - 1) / batch_size) as usize);
    let mut lo = 0;
    while lo < n_items {
        let hi = (lo + batch_size).min(n_items);
        out.push(lo..hi);
        lo = hi;
    }
    out
}

/// Runs `f` once per batch (arguments: batch index, item range) and returns
/// the outputs in batch order. Always available; never uses threads.
pub fn map_batches_sequential<T, F>(n_items: u64, batch_size: u64, f: F) -> Vec<T>
where
    F: Fn(usize, Range<u64>) -> T,
{
    batch_ranges(n_items, batch_size)
        .into_iter()
        .enumerate()
        .map(|(i, r)| f(i, r))
        .collect()
}

/// Runs `f` once per batch under the requested parallelism and returns the
/// outputs in batch order.
#[cfg(feature = "parallel")]
pub fn map_batches<T, F>(n_items: u64, batch_size: u64, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<u64>) -> T + Sync,
{
    use rayon::prelude::*;
    let ranges = batch_ranges(n_items, batch_size);
    match par {
        Parallelism::Sequential => ranges.into_iter().enumerate().map(|(i, r)| f(i, r)).collect(),
        Parallelism::Auto => ranges
            .into_par_iter()
            .enumerate()
            .map(|(i, r)| f(i, r))
            .collect(),
        Parallelism::Threads(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool construction");
            pool.install(|| {
                ranges
                    .into_par_iter()
                    .enumerate()
                    .map(|(i, r)| f(i, r))
                    .collect()
            })
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_batches<T, F>(n_items: u64, batch_size: u64, _par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<u64>) -> T + Sync,
{
    map_batches_sequential(n_items, batch_size, f)
}
