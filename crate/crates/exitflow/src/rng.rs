//! Deterministic stream derivation.
//!
//! Every sampling routine in this crate takes an explicit RNG derived from a
//! `(master_seed, stream_index)` pair. ChaCha8 exposes 2^64 independent
//! streams per seed, so one master seed fans out into as many decorrelated
//! generators as we need, and the assignment of stream indices to work items
//! is a pure function of the experiment layout — results are bitwise
//! reproducible no matter how samples are scheduled across threads.
//!
//! Stream-index layout:
//!
//! * exit simulation: `((eta_index + 1) << 32) | sample_index`. The index
//!   deliberately does NOT depend on the truncation radius, so cells at
//!   different radii see identical noise for the same (eta, sample) — the
//!   coupling that truncation-monotonicity and coincidence checks rely on.
//! * measure estimation: `MEASURE_STREAM_BASE + sample_index`
//! * geometry search:    `SEARCH_STREAM_BASE + draw_index`
//! * atom diagnostics:   `ATOM_STREAM_BASE + sample_index`
//!
//! Eta grids are tiny (tens of entries) and per-cell sample counts fit in
//! 32 bits, so the ranges cannot collide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MEASURE_STREAM_BASE: u64 = 1 << 48;
pub const SEARCH_STREAM_BASE: u64 = 1 << 49;
pub const ATOM_STREAM_BASE: u64 = 1 << 50;

/// The generator for one work item of one experiment.
pub fn stream_rng(master_seed: u64, stream_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_index);
    rng
}

/// Stream index for exit-simulation sample `sample_index` at eta grid
/// position `eta_index`. Shared across truncation radii on purpose.
pub fn exit_stream(eta_index: usize, sample_index: u64) -> u64 {
    debug_assert!(sample_index < (1 << 32));
    ((eta_index as u64 + 1) << 32) | sample_index
}
