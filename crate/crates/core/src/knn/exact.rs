use rayon::prelude::*;

use super::NeighborTable;
use crate::dataspace::DatasetStore;
use crate::error::{Error, Result};
use crate::matrix::{sq_euclidean, Matrix};

/// Exhaustive O(N^2) KNN over `live` slots; ties go to the lower index.
pub fn exact_knn_by(
    n_slots: usize,
    live: &[usize],
    k: usize,
    dist: &(impl Fn(usize, usize) -> f64 + Sync + ?Sized),
) -> Result<NeighborTable> {
    if k == 0 || k >= live.len() {
        return Err(Error::CapacityBound { k, n: live.len() });
    }
    let rows: Vec<(usize, Vec<(u32, f64)>)> = live
        .par_iter()
        .map(|&i| {
            let mut all: Vec<(u32, f64)> = live
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (j as u32, dist(i, j)))
                .collect();
            let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < all.len() {
                all.select_nth_unstable_by(k, cmp);
                all.truncate(k);
            }
            all.sort_by(cmp);
            (i, all)
        })
        .collect();
    let mut table = NeighborTable::new(n_slots, k);
    for (i, mut row) in rows {
        table.set_row(i, &mut row);
    }
    Ok(table)
}

/// Ground-truth neighbours of every live point of `store`.
pub fn exact_knn(store: &DatasetStore, k: usize) -> Result<NeighborTable> {
    let live = store.sorted_live_indices();
    exact_knn_by(store.n_slots(), &live, k, &|i, j| store.dist2(i, j))
}

/// Exact euclidean neighbours between the rows of a dense matrix.
pub fn exact_knn_matrix(m: &Matrix, k: usize) -> Result<NeighborTable> {
    let live: Vec<usize> = (0..m.rows()).collect();
    exact_knn_by(m.rows(), &live, k, &|i, j| sq_euclidean(m.row(i), m.row(j)))
}
