//! High-dimensional dataset storage, distance metrics, file formats and PCA.
//!
//! Points live in fixed-width row slots. Removing a point frees its slot for
//! reuse; indices of other points never move, so neighbour tables and
//! affinities can keep referring to slot indices across structural changes.

mod io;
mod pca;

pub use io::{load_dataset, load_matrix, read_fbin, save_matrix, write_csv, Format, FBIN_MAGIC};
pub use pca::{pca_reduce, PcaModel, PCA_MAX_ITERS, PCA_TOLERANCE};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, sq_euclidean, Matrix};

/// Distance used in the high-dimensional space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; callers always see it squared like the euclidean case.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => f.write_str("euclidean"),
            Metric::Cosine => f.write_str("cosine"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::param("metric", format!("unknown metric {other:?}"))),
        }
    }
}

/// Mutable set of points with slot recycling.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
    live: Vec<bool>,
    live_ids: Vec<usize>,
    live_pos: Vec<usize>,
    free_list: Vec<usize>,
    generation: u64,
    metric: Metric,
}

impl DatasetStore {
    pub fn new(dim: usize, metric: Metric) -> Self {
        Self {
            dim,
            data: Vec::new(),
            norms: Vec::new(),
            live: Vec::new(),
            live_ids: Vec::new(),
            live_pos: Vec::new(),
            free_list: Vec::new(),
            generation: 0,
            metric,
        }
    }

    /// Builds a store from every row of `matrix`, validating values.
    pub fn from_matrix(matrix: &Matrix, metric: Metric) -> Result<Self> {
        let mut store = Self::new(matrix.cols(), metric);
        for (r, row) in matrix.iter_rows().enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
            if metric == Metric::Cosine && dot(row, row) == 0.0 {
                return Err(Error::ZeroVector { row: r });
            }
            store.push_slot(row);
        }
        store.generation = 0;
        Ok(store)
    }

    fn push_slot(&mut self, row: &[f64]) -> usize {
        let slot = self.live.len();
        self.data.extend_from_slice(row);
        self.norms.push(dot(row, row).sqrt());
        self.live.push(true);
        self.live_pos.push(self.live_ids.len());
        self.live_ids.push(slot);
        slot
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of slots, live or free. Per-point buffers elsewhere are sized by this.
    #[inline]
    pub fn n_slots(&self) -> usize {
        self.live.len()
    }

    #[inline]
    pub fn n_live(&self) -> usize {
        self.live_ids.len()
    }

    #[inline]
    pub fn is_live(&self, i: usize) -> bool {
        self.live.get(i).copied().unwrap_or(false)
    }

    /// Live slot indices. The order is stable between structural changes.
    pub fn live_indices(&self) -> &[usize] {
        &self.live_ids
    }

    /// Live slot indices in ascending order.
    pub fn sorted_live_indices(&self) -> Vec<usize> {
        (0..self.n_slots()).filter(|&i| self.live[i]).collect()
    }

    pub fn free_list(&self) -> &[usize] {
        &self.free_list
    }

    #[inline]
    pub fn generation(&self) -> u64 {
        self.generation
    }

    #[inline]
    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Switches the metric. Cosine is refused if any live row is the zero vector.
    pub fn set_metric(&mut self, metric: Metric) -> Result<()> {
        if metric == Metric::Cosine {
            if let Some(&i) = self.live_ids.iter().find(|&&i| self.norms[i] == 0.0) {
                return Err(Error::ZeroVector { row: i });
            }
        }
        self.metric = metric;
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared distance between two live points.
    pub fn distance2(&self, i: usize, j: usize) -> Result<f64> {
        for k in [i, j] {
            if !self.is_live(k) {
                return Err(Error::DeadIndex(k));
            }
        }
        Ok(self.dist2(i, j))
    }

    /// Unchecked variant of [`distance2`](Self::distance2) for hot loops.
    #[inline]
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match self.metric {
            Metric::Euclidean => sq_euclidean(self.row(i), self.row(j)),
            Metric::Cosine => {
                let c = dot(self.row(i), self.row(j)) / (self.norms[i] * self.norms[j]);
                let d = 1.0 - c;
                d * d
            }
        }
    }

    /// Squared distance from slot `i` to an arbitrary vector.
    pub fn dist2_to(&self, i: usize, x: &[f64]) -> f64 {
        match self.metric {
            Metric::Euclidean => sq_euclidean(self.row(i), x),
            Metric::Cosine => {
                let nx = dot(x, x).sqrt();
                let d = 1.0 - dot(self.row(i), x) / (self.norms[i] * nx);
                d * d
            }
        }
    }

    /// Adds a point, reusing a freed slot when one exists. Returns its index.
    pub fn add_row(&mut self, row: &[f64]) -> Result<usize> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: self.n_slots(),
                col: c,
            });
        }
        let norm = dot(row, row).sqrt();
        if self.metric == Metric::Cosine && norm == 0.0 {
            return Err(Error::ZeroVector { row: self.n_slots() });
        }
        let slot = match self.free_list.pop() {
            Some(slot) => {
                self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(row);
                self.norms[slot] = norm;
                self.live[slot] = true;
                self.live_pos[slot] = self.live_ids.len();
                self.live_ids.push(slot);
                slot
            }
            None => self.push_slot(row),
        };
        self.generation += 1;
        Ok(slot)
    }

    pub fn remove(&mut self, i: usize) -> Result<()> {
        if !self.is_live(i) {
            return Err(Error::DeadIndex(i));
        }
        let pos = self.live_pos[i];
        self.live_ids.swap_remove(pos);
        if let Some(&moved) = self.live_ids.get(pos) {
            self.live_pos[moved] = pos;
        }
        self.live[i] = false;
        self.free_list.push(i);
        self.generation += 1;
        Ok(())
    }

    /// Uniformly random live index.
    #[inline]
    pub fn random_live<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.live_ids[rng.random_range(0..self.live_ids.len())]
    }

    /// Live rows in ascending slot order, plus the slot of each output row.
    pub fn live_matrix(&self) -> (Matrix, Vec<usize>) {
        let ids = self.sorted_live_indices();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in &ids {
            data.extend_from_slice(self.row(i));
        }
        (Matrix::from_vec(ids.len(), self.dim, data), ids)
    }
}
