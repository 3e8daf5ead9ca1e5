//! Monte Carlo batches.
//!
//! Path `i` of a batch uses seed `path_seed(master, i)`, so any path can be
//! reproduced on its own. Paths run on the rayon pool; results come back in
//! index order regardless of scheduling.

use std::ops::Range;

use gmsim_core::market_sim::{GmpsEngine, PathRecord};
use gmsim_core::rng::path_seed;
use gmsim_core::Result;
use rayon::prelude::*;

pub fn simulate_batch(
    engine: &GmpsEngine,
    horizon: f64,
    master_seed: u64,
    n_paths: usize,
) -> Result<Vec<PathRecord>> {
    map_batch(engine, horizon, master_seed, 0..n_paths as u64, |_, p| p)
}

/// Simulates paths `indices` and maps each through `f` before collecting,
/// so large batches can be reduced without keeping every event in memory.
pub fn map_batch<T, F>(
    engine: &GmpsEngine,
    horizon: f64,
    master_seed: u64,
    indices: Range<u64>,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, PathRecord) -> T + Sync,
{
    indices
        .into_par_iter()
        .map(|i| engine.simulate(horizon, path_seed(master_seed, i)).map(|p| f(i, p)))
        .collect()
}
