use serde::Serialize;

/// `true` when `(d1, j1)` sorts before `(d2, j2)`: smaller distance first,
/// lower index on ties.
#[inline]
pub(crate) fn before(d1: f64, j1: u32, d2: f64, j2: u32) -> bool {
    d1 < d2 || (d1 == d2 && j1 < j2)
}

/// Fixed-capacity sorted neighbour lists, one row per point slot.
///
/// Every active row holds exactly `k` distinct entries sorted by
/// `(distance, index)`. Inactive rows belong to free slots.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    idx: Vec<u32>,
    dist: Vec<f64>,
    active: Vec<bool>,
    dirty: Vec<bool>,
}

#[derive(Debug, Serialize)]
struct RowJson<'a> {
    point: usize,
    neighbors: &'a [u32],
    distances: &'a [f64],
}

impl NeighborTable {
    pub fn new(n_slots: usize, k: usize) -> Self {
        Self {
            k,
            idx: vec![u32::MAX; n_slots * k],
            dist: vec![f64::INFINITY; n_slots * k],
            active: vec![false; n_slots],
            dirty: vec![false; n_slots],
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn n_slots(&self) -> usize {
        self.active.len()
    }

    pub fn grow(&mut self, n_slots: usize) {
        if n_slots > self.n_slots() {
            self.idx.resize(n_slots * self.k, u32::MAX);
            self.dist.resize(n_slots * self.k, f64::INFINITY);
            self.active.resize(n_slots, false);
            self.dirty.resize(n_slots, false);
        }
    }

    #[inline]
    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.dist[i * self.k..(i + 1) * self.k]
    }

    pub fn entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbors(i)
            .iter()
            .zip(self.distances(i))
            .map(|(&j, &d)| (j as usize, d))
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).contains(&(j as u32))
    }

    /// Worst (last) entry of row `i`.
    #[inline]
    pub fn worst(&self, i: usize) -> (u32, f64) {
        let last = (i + 1) * self.k - 1;
        (self.idx[last], self.dist[last])
    }

    #[inline]
    pub fn is_dirty(&self, i: usize) -> bool {
        self.dirty[i]
    }

    pub fn set_dirty(&mut self, i: usize) {
        self.dirty[i] = true;
    }

    pub fn clear_dirty(&mut self, i: usize) {
        self.dirty[i] = false;
    }

    pub fn mark_all_dirty(&mut self) {
        for (d, &a) in self.dirty.iter_mut().zip(&self.active) {
            *d = a;
        }
    }

    pub fn dirty_rows(&self) -> Vec<usize> {
        (0..self.n_slots())
            .filter(|&i| self.active[i] && self.dirty[i])
            .collect()
    }

    /// Replaces row `i` with `entries` (exactly `k` distinct, non-self).
    pub fn set_row(&mut self, i: usize, entries: &mut [(u32, f64)]) {
        assert_eq!(entries.len(), self.k, "row must hold exactly k entries");
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (idx, dist) = self.row_mut(i);
        for (slot, &(j, d)) in entries.iter().enumerate() {
            idx[slot] = j;
            dist[slot] = d;
        }
        self.active[i] = true;
    }

    pub fn clear_row(&mut self, i: usize) {
        let (idx, dist) = self.row_mut(i);
        idx.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        self.active[i] = false;
        self.dirty[i] = false;
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> (&mut [u32], &mut [f64]) {
        let r = i * self.k..(i + 1) * self.k;
        (&mut self.idx[r.clone()], &mut self.dist[r])
    }

    pub(crate) fn rows_mut(&mut self) -> (&mut [u32], &mut [f64], &[bool]) {
        (&mut self.idx, &mut self.dist, &self.active)
    }

    /// Offers `(j, d)` to row `i`. Returns the insertion position when accepted.
    pub fn try_insert(&mut self, i: usize, j: usize, d: f64) -> Option<usize> {
        let k = self.k;
        let (idx, dist) = self.row_mut(i);
        insert_sorted(idx, dist, i, j, d, k)
    }

    /// Multiplies every stored distance of the active rows by `factor`.
    pub fn scale_distances(&mut self, factor: f64) {
        for (i, &a) in self.active.iter().enumerate() {
            if a {
                for d in &mut self.dist[i * self.k..(i + 1) * self.k] {
                    *d *= factor;
                }
            }
        }
    }

    /// Recomputes stored distances of row `i` and restores the sort order.
    pub fn refresh_row(&mut self, i: usize, dist_fn: impl Fn(usize) -> f64) {
        let (idx, dist) = self.row_mut(i);
        refresh_sorted(idx, dist, dist_fn);
    }

    /// Checks every structural invariant. `live` tells which slots are live;
    /// `dist_fn`, when given, must reproduce the stored distances.
    pub fn check_invariants(
        &self,
        live: impl Fn(usize) -> bool,
        dist_fn: Option<&dyn Fn(usize, usize) -> f64>,
    ) -> Result<(), String> {
        for i in 0..self.n_slots() {
            if self.active[i] != live(i) {
                return Err(format!("row {i} active={} but live={}", self.active[i], live(i)));
            }
            if !self.active[i] {
                continue;
            }
            let idx = self.neighbors(i);
            let dist = self.distances(i);
            for a in 0..self.k {
                let j = idx[a] as usize;
                if j == i {
                    return Err(format!("row {i} contains itself"));
                }
                if j >= self.n_slots() || !live(j) {
                    return Err(format!("row {i} references dead index {j}"));
                }
                if idx[..a].contains(&idx[a]) {
                    return Err(format!("row {i} duplicates {j}"));
                }
                if a > 0 && !before(dist[a - 1], idx[a - 1], dist[a], idx[a]) {
                    return Err(format!("row {i} unsorted at {a}"));
                }
                if let Some(f) = dist_fn {
                    let exact = f(i, j);
                    if (exact - dist[a]).abs() > 1e-9 * exact.abs().max(1.0) {
                        return Err(format!("row {i} stores {} for {j}, actual {exact}", dist[a]));
                    }
                }
            }
        }
        Ok(())
    }

    /// Debug dump: one object per active row with neighbour indices and distances.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<RowJson<'_>> = (0..self.n_slots())
            .filter(|&i| self.active[i])
            .map(|i| RowJson {
                point: i,
                neighbors: self.neighbors(i),
                distances: self.distances(i),
            })
            .collect();
        serde_json::to_value(rows).expect("table rows serialize")
    }
}

/// Inserts into a sorted fixed-size row, evicting the last entry.
#[inline]
pub(crate) fn insert_sorted(
    idx: &mut [u32],
    dist: &mut [f64],
    owner: usize,
    j: usize,
    d: f64,
    k: usize,
) -> Option<usize> {
    let j32 = j as u32;
    if j == owner || !before(d, j32, dist[k - 1], idx[k - 1]) || idx.contains(&j32) {
        return None;
    }
    let mut pos = k - 1;
    while pos > 0 && before(d, j32, dist[pos - 1], idx[pos - 1]) {
        idx[pos] = idx[pos - 1];
        dist[pos] = dist[pos - 1];
        pos -= 1;
    }
    idx[pos] = j32;
    dist[pos] = d;
    Some(pos)
}

pub(crate) fn refresh_sorted(idx: &mut [u32], dist: &mut [f64], dist_fn: impl Fn(usize) -> f64) {
    for (j, d) in idx.iter().zip(dist.iter_mut()) {
        *d = dist_fn(*j as usize);
    }
    // insertion sort: rows are short and usually nearly sorted
    for a in 1..idx.len() {
        let (j, d) = (idx[a], dist[a]);
        let mut b = a;
        while b > 0 && before(d, j, dist[b - 1], idx[b - 1]) {
            idx[b] = idx[b - 1];
            dist[b] = dist[b - 1];
            b -= 1;
        }
        idx[b] = j;
        dist[b] = d;
    }
}
