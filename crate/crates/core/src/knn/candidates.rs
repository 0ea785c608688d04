use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeighborTable;

/// Relative share of the candidate budget given to each pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolQuotas {
    /// Neighbours of neighbours inside the table being refined.
    pub own_hops: u32,
    /// Neighbours, and neighbours of neighbours, in the other space's table.
    pub other_hops: u32,
    /// One hop in each table (either order).
    pub cross_hops: u32,
    /// Uniformly random live points.
    pub random: u32,
}

impl Default for PoolQuotas {
    fn default() -> Self {
        Self {
            own_hops: 3,
            other_hops: 2,
            cross_hops: 2,
            random: 1,
        }
    }
}

impl PoolQuotas {
    /// Splits `budget` draws across the pools in proportion to the quotas.
    /// Remainders go to the pools in declaration order.
    pub fn split(&self, budget: usize) -> [usize; 4] {
        let q = [self.own_hops, self.other_hops, self.cross_hops, self.random];
        let total: u32 = q.iter().sum();
        if total == 0 {
            return [0; 4];
        }
        let mut out = q.map(|x| budget * x as usize / total as usize);
        let mut rest = budget - out.iter().sum::<usize>();
        for (slot, &x) in out.iter_mut().zip(&q) {
            if rest == 0 {
                break;
            }
            if x > 0 {
                *slot += 1;
                rest -= 1;
            }
        }
        out
    }
}

#[inline]
fn pick<R: Rng + ?Sized>(table: &NeighborTable, i: usize, rng: &mut R) -> Option<usize> {
    if !table.is_active(i) {
        return None;
    }
    let row = table.neighbors(i);
    Some(row[rng.random_range(0..row.len())] as usize)
}

#[inline]
fn push_unique(out: &mut Vec<u32>, owner: usize, c: Option<usize>) {
    if let Some(c) = c {
        if c != owner && !out.contains(&(c as u32)) {
            out.push(c as u32);
        }
    }
}

/// Fills `out` with at most `budget` distinct candidates for row `i` of `own`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_candidates<R: Rng + ?Sized>(
    i: usize,
    own: &NeighborTable,
    other: &NeighborTable,
    budget: usize,
    quotas: &PoolQuotas,
    live: &[usize],
    rng: &mut R,
    out: &mut Vec<u32>,
) {
    out.clear();
    let [a, b, c, d] = quotas.split(budget);
    for _ in 0..a {
        let hop = pick(own, i, rng).and_then(|j| pick(own, j, rng));
        push_unique(out, i, hop);
    }
    for _ in 0..b {
        let hop = pick(other, i, rng).and_then(|j| {
            if rng.random::<bool>() {
                Some(j)
            } else {
                pick(other, j, rng)
            }
        });
        push_unique(out, i, hop);
    }
    for n in 0..c {
        let hop = if n % 2 == 0 {
            pick(other, i, rng).and_then(|j| pick(own, j, rng))
        } else {
            pick(own, i, rng).and_then(|j| pick(other, j, rng))
        };
        push_unique(out, i, hop);
    }
    for _ in 0..d {
        if !live.is_empty() {
            push_unique(out, i, Some(live[rng.random_range(0..live.len())]));
        }
    }
}

/// Candidate indices for refining row `i` of `own`, using `other` as the
/// table of the opposite space.
pub fn generate_candidates<R: Rng + ?Sized>(
    i: usize,
    own: &NeighborTable,
    other: &NeighborTable,
    budget: usize,
    quotas: &PoolQuotas,
    live: &[usize],
    rng: &mut R,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(budget);
    fill_candidates(i, own, other, budget, quotas, live, rng, &mut out);
    out
}
