use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::candidates::fill_candidates;
use super::table::{insert_sorted, refresh_sorted};
use super::{NeighborTable, PoolQuotas, Space};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Fills row `i` with `k` distinct random live neighbours.
fn random_row<R: Rng>(
    i: usize,
    k: usize,
    live: &[usize],
    rng: &mut R,
    dist: &(impl Fn(usize, usize) -> f64 + ?Sized),
) -> Vec<(u32, f64)> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    if 2 * k >= live.len() {
        let mut pool: Vec<usize> = live.iter().copied().filter(|&j| j != i).collect();
        pool.shuffle(rng);
        picked.extend_from_slice(&pool[..k]);
    } else {
        while picked.len() < k {
            let j = live[rng.random_range(0..live.len())];
            if j != i && !picked.contains(&j) {
                picked.push(j);
            }
        }
    }
    picked.into_iter().map(|j| (j as u32, dist(i, j))).collect()
}

/// Random initial table over `live`, deterministic in `(seed, space)`.
pub fn init_table(
    n_slots: usize,
    live: &[usize],
    k: usize,
    seed: u64,
    space: Space,
    dist: &(impl Fn(usize, usize) -> f64 + Sync + ?Sized),
) -> Result<NeighborTable> {
    if k == 0 || k >= live.len() {
        return Err(Error::CapacityBound { k, n: live.len() });
    }
    let mut table = NeighborTable::new(n_slots, k);
    let rows: Vec<(usize, Vec<(u32, f64)>)> = live
        .par_iter()
        .map(|&i| {
            let mut rng = stream_rng(seed, Stream::Init, space as u64, i as u64);
            (i, random_row(i, k, live, &mut rng, dist))
        })
        .collect();
    for (i, mut row) in rows {
        table.set_row(i, &mut row);
    }
    Ok(table)
}

/// Random HD and LD tables for a fresh session.
pub fn init_tables(
    n_slots: usize,
    live: &[usize],
    k_hd: usize,
    k_ld: usize,
    seed: u64,
    hd_dist: &(impl Fn(usize, usize) -> f64 + Sync + ?Sized),
    ld_dist: &(impl Fn(usize, usize) -> f64 + Sync + ?Sized),
) -> Result<(NeighborTable, NeighborTable)> {
    Ok((
        init_table(n_slots, live, k_hd, seed, Space::Hd, hd_dist)?,
        init_table(n_slots, live, k_ld, seed, Space::Ld, ld_dist)?,
    ))
}

/// Per-pass settings shared by every row.
#[derive(Debug, Clone, Copy)]
pub struct RefineContext<'a> {
    pub space: Space,
    pub budget: usize,
    pub quotas: PoolQuotas,
    pub live: &'a [usize],
    pub seed: u64,
    /// Distinguishes passes so that every pass draws fresh candidates.
    pub pass: u64,
    /// Recompute stored distances before comparing (moving coordinates).
    pub refresh: bool,
}

/// One refinement pass over every active row of `target`.
///
/// Rows read a snapshot of both tables taken before the pass and only write
/// their own row, so the outcome does not depend on scheduling. Rows that
/// gained a neighbour are flagged dirty. Returns the number of such rows.
pub fn refine_pass(
    target: &mut NeighborTable,
    snapshot: &mut NeighborTable,
    other: &NeighborTable,
    ctx: &RefineContext<'_>,
    dist: &(impl Fn(usize, usize) -> f64 + Sync + ?Sized),
) -> usize {
    snapshot.clone_from(target);
    let k = target.k();
    let stream = match ctx.space {
        Space::Hd => Stream::RefineHd,
        Space::Ld => Stream::RefineLd,
    };
    let snap = &*snapshot;
    let (idx, dst, active) = target.rows_mut();
    let changed: Vec<bool> = idx
        .par_chunks_mut(k)
        .zip(dst.par_chunks_mut(k))
        .enumerate()
        .map_init(
            || Vec::with_capacity(ctx.budget),
            |cands, (i, (row_idx, row_dist))| {
                if !active[i] {
                    return false;
                }
                if ctx.refresh {
                    refresh_sorted(row_idx, row_dist, |j| dist(i, j));
                }
                let mut rng = stream_rng(ctx.seed, stream, ctx.pass, i as u64);
                fill_candidates(i, snap, other, ctx.budget, &ctx.quotas, ctx.live, &mut rng, cands);
                let mut changed = false;
                for &c in cands.iter() {
                    let c = c as usize;
                    if row_idx.contains(&(c as u32)) {
                        continue;
                    }
                    let d = dist(i, c);
                    changed |= insert_sorted(row_idx, row_dist, i, c, d, k).is_some();
                }
                changed
            },
        )
        .collect();
    let mut count = 0;
    for (i, c) in changed.into_iter().enumerate() {
        if c {
            target.set_dirty(i);
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::{DatasetStore, Metric};
    use crate::knn::{exact_knn, recall};
    use crate::matrix::Matrix;
    use crate::rng::seeded;
    use rand_distr::{Distribution, Normal};

    fn blobs() -> DatasetStore {
        let mut rng = seeded(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        for b in 0..2 {
            for _ in 0..15 {
                rows.push((0..3).map(|_| b as f64 * 10.0 + noise.sample(&mut rng)).collect());
            }
        }
        DatasetStore::from_matrix(&Matrix::from_rows(&rows), Metric::Euclidean).unwrap()
    }

    #[test]
    fn init_is_a_permutation_when_forced() {
        let store = DatasetStore::from_matrix(
            &Matrix::from_rows(&(0..5).map(|k| vec![k as f64]).collect::<Vec<_>>()),
            Metric::Euclidean,
        )
        .unwrap();
        let live = store.sorted_live_indices();
        let t = init_table(5, &live, 4, 3, Space::Hd, &|i, j| store.dist2(i, j)).unwrap();
        for i in 0..5 {
            let mut row: Vec<u32> = t.neighbors(i).to_vec();
            row.sort_unstable();
            let expect: Vec<u32> = (0..5).filter(|&j| j != i as u32).collect();
            assert_eq!(row, expect);
        }
        assert!(matches!(
            init_table(5, &live, 5, 3, Space::Hd, &|i, j| store.dist2(i, j)),
            Err(Error::CapacityBound { .. })
        ));
    }

    #[test]
    fn init_is_deterministic() {
        let store = blobs();
        let live = store.sorted_live_indices();
        let d = |i, j| store.dist2(i, j);
        let a = init_table(30, &live, 10, 99, Space::Hd, &d).unwrap();
        let b = init_table(30, &live, 10, 99, Space::Hd, &d).unwrap();
        assert_eq!(a, b);
        a.check_invariants(|i| store.is_live(i), Some(&d)).unwrap();
    }

    #[test]
    fn three_points_k3_is_rejected() {
        let live = [0, 1, 2];
        assert!(init_table(3, &live, 3, 0, Space::Hd, &|_, _| 1.0).is_err());
    }

    fn ctx(live: &[usize], pass: u64) -> RefineContext<'_> {
        RefineContext {
            space: Space::Hd,
            budget: 8,
            quotas: PoolQuotas::default(),
            live,
            seed: 5,
            pass,
            refresh: false,
        }
    }

    #[test]
    fn no_improvement_leaves_table_unchanged() {
        let store = blobs();
        let live = store.sorted_live_indices();
        let d = |i, j| store.dist2(i, j);
        let mut t = exact_knn(&store, 5).unwrap();
        let before = t.clone();
        let other = t.clone();
        let mut snap = NeighborTable::new(0, 5);
        let changed = refine_pass(&mut t, &mut snap, &other, &ctx(&live, 0), &d);
        assert_eq!(changed, 0);
        assert_eq!(t, before);
    }

    #[test]
    fn refinement_reaches_exact_on_separated_blobs() {
        let store = blobs();
        let live = store.sorted_live_indices();
        let d = |i, j| store.dist2(i, j);
        let oracle = exact_knn(&store, 5).unwrap();
        let mut t = init_table(30, &live, 5, 1, Space::Hd, &d).unwrap();
        let other = init_table(30, &live, 5, 2, Space::Ld, &d).unwrap();
        let mut snap = NeighborTable::new(0, 5);
        let mut last = recall(&oracle, &t, 5);
        let mut worst: Vec<f64> = live.iter().map(|&i| t.worst(i).1).collect();
        for pass in 0..300 {
            refine_pass(&mut t, &mut snap, &other, &ctx(&live, pass), &d);
            let r = recall(&oracle, &t, 5);
            assert!(r >= last, "recall decreased");
            last = r;
            for (w, &i) in worst.iter_mut().zip(&live) {
                assert!(t.worst(i).1 <= *w);
                *w = t.worst(i).1;
            }
            t.check_invariants(|i| store.is_live(i), Some(&d)).unwrap();
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn exact_neighbour_enters_and_worst_leaves() {
        let store = blobs();
        let live = store.sorted_live_indices();
        let d = |i, j| store.dist2(i, j);
        let oracle = exact_knn(&store, 3).unwrap();
        // Row 0 holds the three farthest points; the other table offers the true neighbours.
        let mut far: Vec<(u32, f64)> = (15..18).map(|j| (j as u32, d(0, j))).collect();
        let mut t = exact_knn(&store, 3).unwrap();
        t.set_row(0, &mut far);
        let mut other = NeighborTable::new(30, 3);
        for &i in &live {
            let mut row: Vec<(u32, f64)> = oracle.entries(i).map(|(j, dd)| (j as u32, dd)).collect();
            other.set_row(i, &mut row);
        }
        let mut snap = NeighborTable::new(0, 3);
        for pass in 0..20 {
            refine_pass(&mut t, &mut snap, &other, &ctx(&live, pass), &d);
        }
        assert_eq!(t.neighbors(0), oracle.neighbors(0));
        assert!(t.is_dirty(0));
    }
}
