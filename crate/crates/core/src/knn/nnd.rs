//! Classic nearest-neighbour descent, used as the comparison baseline.
//!
//! Local joins over forward and reverse neighbour lists with new/old flags,
//! repeated until a pass improves fewer than 0.1% of the table entries.

use rand::seq::SliceRandom;

use super::refine::init_table;
use super::{NeighborTable, Space};
use crate::dataspace::DatasetStore;
use crate::error::Result;
use crate::rng::{stream_rng, Stream};

pub const NND_MIN_UPDATE_FRACTION: f64 = 0.001;
pub const NND_MAX_PASSES: usize = 60;

#[derive(Debug, Clone)]
pub struct NndReport {
    pub table: NeighborTable,
    pub passes: usize,
    /// Successful insertions per pass.
    pub updates: Vec<usize>,
    pub converged: bool,
}

struct Flagged {
    table: NeighborTable,
    fresh: Vec<bool>,
}

impl Flagged {
    fn update(&mut self, i: usize, j: usize, d: f64) -> bool {
        let k = self.table.k();
        match self.table.try_insert(i, j, d) {
            Some(pos) => {
                let flags = &mut self.fresh[i * k..(i + 1) * k];
                flags.copy_within(pos..k - 1, pos + 1);
                flags[pos] = true;
                true
            }
            None => false,
        }
    }
}

pub fn nnd_baseline(store: &DatasetStore, k: usize, seed: u64) -> Result<NndReport> {
    nnd_with_trace(store, k, seed, NND_MAX_PASSES, |_, _| {})
}

/// Runs NND for at most `max_passes` join passes, calling
/// `on_pass(pass, table)` after initialisation (pass 0) and after every pass.
pub fn nnd_with_trace(
    store: &DatasetStore,
    k: usize,
    seed: u64,
    max_passes: usize,
    mut on_pass: impl FnMut(usize, &NeighborTable),
) -> Result<NndReport> {
    let live = store.sorted_live_indices();
    let n_slots = store.n_slots();
    let table = init_table(n_slots, &live, k, seed, Space::Hd, &|i, j| store.dist2(i, j))?;
    let mut state = Flagged {
        table,
        fresh: vec![true; n_slots * k],
    };
    on_pass(0, &state.table);

    let threshold = NND_MIN_UPDATE_FRACTION * (live.len() * k) as f64;
    let mut updates = Vec::new();
    let mut converged = false;
    let mut new_fwd: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    let mut old_fwd: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    let mut new_rev: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    let mut old_rev: Vec<Vec<usize>> = vec![Vec::new(); n_slots];

    for pass in 1..=max_passes {
        for &v in &live {
            new_fwd[v].clear();
            old_fwd[v].clear();
            new_rev[v].clear();
            old_rev[v].clear();
        }
        for &v in &live {
            let row = state.table.neighbors(v);
            for (slot, &u) in row.iter().enumerate() {
                let flag = &mut state.fresh[v * k + slot];
                if *flag {
                    new_fwd[v].push(u as usize);
                    *flag = false;
                } else {
                    old_fwd[v].push(u as usize);
                }
            }
        }
        for &v in &live {
            for &u in &new_fwd[v] {
                new_rev[u].push(v);
            }
            for &u in &old_fwd[v] {
                old_rev[u].push(v);
            }
        }
        let mut c = 0usize;
        let mut news = Vec::new();
        let mut olds = Vec::new();
        for &v in &live {
            let mut rng = stream_rng(seed, Stream::Nnd, pass as u64, v as u64);
            news.clear();
            olds.clear();
            news.extend_from_slice(&new_fwd[v]);
            olds.extend_from_slice(&old_fwd[v]);
            for (rev, dst) in [(&mut new_rev[v], &mut news), (&mut old_rev[v], &mut olds)] {
                if rev.len() > k {
                    rev.shuffle(&mut rng);
                    rev.truncate(k);
                }
                for &u in rev.iter() {
                    if !dst.contains(&u) {
                        dst.push(u);
                    }
                }
            }
            for a in 0..news.len() {
                let p = news[a];
                for &q in &news[a + 1..] {
                    if p == q {
                        continue;
                    }
                    let d = store.dist2(p, q);
                    c += state.update(p, q, d) as usize;
                    c += state.update(q, p, d) as usize;
                }
                for &q in olds.iter() {
                    if p == q {
                        continue;
                    }
                    let d = store.dist2(p, q);
                    c += state.update(p, q, d) as usize;
                    c += state.update(q, p, d) as usize;
                }
            }
        }
        updates.push(c);
        on_pass(pass, &state.table);
        if (c as f64) < threshold {
            converged = true;
            break;
        }
    }
    Ok(NndReport {
        passes: updates.len(),
        table: state.table,
        updates,
        converged,
    })
}
