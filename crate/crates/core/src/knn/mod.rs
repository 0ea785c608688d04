//! Approximate neighbour tables for the high-dimensional (HD) and embedding
//! (LD) spaces.
//!
//! Both tables are refined a little at every iteration. Candidates for one
//! space come from neighbours-of-neighbours in that space, from the other
//! space's table, from mixed hops across the two, and from uniform sampling.
//! The brute-force [`exact_knn`] and the classic [`nnd_baseline`] live here
//! too, for validation and comparison.

mod candidates;
mod exact;
mod nnd;
mod refine;
mod table;

pub use candidates::{generate_candidates, PoolQuotas};
pub use exact::{exact_knn, exact_knn_by, exact_knn_matrix};
pub use nnd::{nnd_baseline, nnd_with_trace, NndReport, NND_MAX_PASSES, NND_MIN_UPDATE_FRACTION};
pub use refine::{init_table, init_tables, refine_pass, RefineContext};
pub use table::NeighborTable;

use serde::{Deserialize, Serialize};

/// Which space a table indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Hd,
    Ld,
}

/// EMA coefficient applied to `fraction_new` at every HD pass.
pub const FRACTION_NEW_SMOOTHING: f64 = 0.95;

/// Smoothed rate at which HD refinement still finds new neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineStats {
    pub fraction_new: f64,
    pub last_pass_new_count: usize,
}

impl Default for RefineStats {
    /// Fresh tables are random, so refinement starts at full rate.
    fn default() -> Self {
        Self {
            fraction_new: 1.0,
            last_pass_new_count: 0,
        }
    }
}

impl RefineStats {
    pub fn record_pass(&mut self, changed: usize, n_live: usize) {
        let frac = if n_live == 0 {
            0.0
        } else {
            changed as f64 / n_live as f64
        };
        self.fraction_new =
            (FRACTION_NEW_SMOOTHING * self.fraction_new + (1.0 - FRACTION_NEW_SMOOTHING) * frac).clamp(0.0, 1.0);
        self.last_pass_new_count = changed;
    }
}

/// Probability of running an HD refinement pass in the current iteration.
pub fn refine_probability(stats: &RefineStats) -> f64 {
    0.05 + 0.95 * stats.fraction_new.clamp(0.0, 1.0)
}

/// Mean fraction of the first `k` reference neighbours recovered by `compared`.
pub fn recall(reference: &NeighborTable, compared: &NeighborTable, k: usize) -> f64 {
    let mut hits = 0usize;
    let mut rows = 0usize;
    for i in 0..reference.n_slots() {
        if !reference.is_active(i) || !compared.is_active(i) {
            continue;
        }
        let cmp = &compared.neighbors(i)[..k];
        hits += reference.neighbors(i)[..k].iter().filter(|j| cmp.contains(j)).count();
        rows += 1;
    }
    if rows == 0 {
        return 0.0;
    }
    hits as f64 / (rows * k) as f64
}
