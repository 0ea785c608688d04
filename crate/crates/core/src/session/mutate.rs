use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Session;
use crate::dataspace::Metric;
use crate::error::{Error, Result};
use crate::matrix::{sq_euclidean, Matrix};
use crate::rng::{stream_rng, Stream};

/// Number of random HD probes used to place a new point.
pub const INSERT_PROBES: usize = 32;
/// Standard deviation of the jitter added to a new point's LD position.
pub const INSERT_JITTER: f64 = 0.01;

/// Value of a runtime parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl ParamValue {
    fn number(&self, name: &str) -> Result<f64> {
        match self {
            ParamValue::Number(v) if v.is_finite() => Ok(*v),
            ParamValue::Number(v) => Err(Error::param(name, format!("{v} is not finite"))),
            ParamValue::Text(t) => t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::param(name, format!("expected a number, got {t:?}"))),
        }
    }
}

pub const PARAM_NAMES: [&str; 7] = [
    "alpha",
    "attraction_scale",
    "repulsion_scale",
    "perplexity",
    "learning_rate",
    "metric",
    "n_negative",
];

impl Session {
    /// Changes a hyperparameter; takes effect at the next step. Invalid
    /// values leave the session unchanged.
    pub fn set_param(&mut self, name: &str, value: impl Into<ParamValue>) -> Result<()> {
        let value = value.into();
        let positive = |v: f64| {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::param(name, "must be > 0"))
            }
        };
        match name {
            "alpha" => self.config.kernel.alpha = positive(value.number(name)?)?,
            "attraction_scale" => self.config.kernel.attraction_scale = positive(value.number(name)?)?,
            "repulsion_scale" => self.config.kernel.repulsion_scale = positive(value.number(name)?)?,
            "learning_rate" => {
                let lr = value.number(name)?;
                if lr < 0.0 {
                    return Err(Error::param(name, "must be >= 0"));
                }
                self.learning_rate = lr;
                self.config.learning_rate = Some(lr);
            }
            "n_negative" => {
                let v = value.number(name)?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::param(name, "must be a positive integer"));
                }
                self.config.kernel.n_negative = v as usize;
            }
            "perplexity" => {
                let v = value.number(name)?;
                self.aff.set_perplexity(v)?;
                self.config.perplexity = v;
                self.hd.mark_all_dirty();
                self.stats.fraction_new = 1.0;
            }
            "metric" => {
                let metric: Metric = match &value {
                    ParamValue::Text(t) => t.parse()?,
                    ParamValue::Number(_) => return Err(Error::param(name, "expected a metric name")),
                };
                self.store.set_metric(metric)?;
                let store = &self.store;
                for &i in &self.live {
                    self.hd.refresh_row(i, |j| store.dist2(i, j));
                }
                self.hd.mark_all_dirty();
                self.stats.fraction_new = 1.0;
            }
            _ => return Err(Error::UnknownParam(name.to_string())),
        }
        Ok(())
    }

    /// Current value of a parameter, for status reporting.
    pub fn param(&self, name: &str) -> Option<ParamValue> {
        let k = &self.config.kernel;
        Some(match name {
            "alpha" => k.alpha.into(),
            "attraction_scale" => k.attraction_scale.into(),
            "repulsion_scale" => k.repulsion_scale.into(),
            "learning_rate" => self.learning_rate.into(),
            "n_negative" => (k.n_negative as f64).into(),
            "perplexity" => self.config.perplexity.into(),
            "metric" => ParamValue::Text(self.store.metric().to_string()),
            _ => return None,
        })
    }

    /// Scales every LD coordinate by `factor` and clears the momentum.
    pub fn implode(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::param("factor", format!("{factor} not in (0, 1)")));
        }
        let d = self.config.dim;
        for &i in &self.live {
            for v in &mut self.coords.as_mut_slice()[i * d..(i + 1) * d] {
                *v *= factor;
            }
        }
        self.velocity.fill(0.0);
        self.ld.scale_distances(factor * factor);
        self.reestimate_z()
    }

    fn grow_slots(&mut self, n_slots: usize) {
        let d = self.config.dim;
        if n_slots > self.coords.rows() {
            let mut data = std::mem::take(&mut self.coords).into_vec();
            data.resize(n_slots * d, 0.0);
            self.coords = Matrix::from_vec(n_slots, d, data);
            self.velocity.resize(n_slots * d, 0.0);
        }
        self.hd.grow(n_slots);
        self.ld.grow(n_slots);
        self.aff.grow(n_slots);
    }

    /// Inserts new HD rows. Each gets HD neighbours from random probes, an LD
    /// position next to its nearest probe, and calibrated affinities.
    pub fn add_points(&mut self, rows: &Matrix) -> Result<Vec<usize>> {
        if rows.rows() > 0 && rows.cols() != self.store.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.store.dim(),
                found: rows.cols(),
            });
        }
        for (r, row) in rows.iter_rows().enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r + 1, col: c });
            }
            if self.store.metric() == Metric::Cosine && row.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVector { row: r + 1 });
            }
        }
        let (k_hd, k_ld, d) = (self.config.k_hd, self.config.k_ld, self.config.dim);
        let jitter = Normal::new(0.0, INSERT_JITTER).unwrap();
        let mut added = Vec::with_capacity(rows.rows());
        for row in rows.iter_rows() {
            let existing = self.live.clone();
            let slot = self.store.add_row(row)?;
            self.grow_slots(self.store.n_slots());
            let mut rng = stream_rng(self.config.seed, Stream::Insert, self.store.generation(), slot as u64);

            let mut probes: Vec<usize> = if existing.len() <= INSERT_PROBES {
                existing.clone()
            } else {
                existing.choose_multiple(&mut rng, INSERT_PROBES).copied().collect()
            };
            let store = &self.store;
            let mut entries: Vec<(u32, f64)> = probes.iter().map(|&j| (j as u32, store.dist2(slot, j))).collect();
            entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let nearest = entries[0].0 as usize;
            entries.truncate(k_hd);
            while entries.len() < k_hd {
                let j = existing[rng.random_range(0..existing.len())];
                if !entries.iter().any(|e| e.0 as usize == j) {
                    entries.push((j as u32, store.dist2(slot, j)));
                }
            }
            self.hd.set_row(slot, &mut entries);
            self.hd.set_dirty(slot);

            let anchor = self.coords.row(nearest).to_vec();
            for (y, a) in self.coords.row_mut(slot).iter_mut().zip(&anchor) {
                *y = a + jitter.sample(&mut rng);
            }
            self.velocity[slot * d..(slot + 1) * d].fill(0.0);

            probes.clear();
            probes.extend(existing.choose_multiple(&mut rng, k_ld));
            let coords = &self.coords;
            let mut ld_row: Vec<(u32, f64)> = probes
                .iter()
                .map(|&j| (j as u32, sq_euclidean(coords.row(slot), coords.row(j))))
                .collect();
            self.ld.set_row(slot, &mut ld_row);

            let pos = self.live.partition_point(|&x| x < slot);
            self.live.insert(pos, slot);
            added.push(slot);
        }
        self.aff.sync(&mut self.hd, true)?;
        Ok(added)
    }

    /// Removes live points. Every table row that referenced one of them gets
    /// a fresh random replacement and is recalibrated.
    pub fn remove_points(&mut self, indices: &[usize]) -> Result<()> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(Error::Invalid("duplicate indices in removal".into()));
        }
        if let Some(&dead) = sorted.iter().find(|&&i| !self.store.is_live(i)) {
            return Err(Error::DeadIndex(dead));
        }
        let remaining = self.live.len() - sorted.len();
        let k_max = self.config.k_hd.max(self.config.k_ld);
        if remaining <= k_max {
            return Err(Error::CapacityBound { k: k_max, n: remaining });
        }
        let d = self.config.dim;
        for &i in &sorted {
            self.store.remove(i)?;
            self.aff.remove_point(i);
            self.hd.clear_row(i);
            self.ld.clear_row(i);
            self.coords.row_mut(i).fill(0.0);
            self.velocity[i * d..(i + 1) * d].fill(0.0);
        }
        self.live = self.store.sorted_live_indices();

        let generation = self.store.generation();
        let seed = self.config.seed;
        for &i in &self.live.clone() {
            let store = &self.store;
            let coords = &self.coords;
            let mut rng = stream_rng(seed, Stream::Insert, generation, i as u64 | (1 << 63));
            if repair_row(&mut self.hd, i, &self.live, &mut rng, |j| store.dist2(i, j)) {
                self.hd.set_dirty(i);
            }
            repair_row(&mut self.ld, i, &self.live, &mut rng, |j| {
                sq_euclidean(coords.row(i), coords.row(j))
            });
        }
        self.aff.sync(&mut self.hd, true)?;
        Ok(())
    }
}

/// Replaces dead references in row `i`. Returns whether anything changed.
fn repair_row<R: Rng>(
    table: &mut crate::knn::NeighborTable,
    i: usize,
    live: &[usize],
    rng: &mut R,
    dist: impl Fn(usize) -> f64,
) -> bool {
    let row = table.neighbors(i);
    let is_live = |j: u32| live.binary_search(&(j as usize)).is_ok();
    if row.iter().all(|&j| is_live(j)) {
        return false;
    }
    let k = table.k();
    let mut entries: Vec<(u32, f64)> = table
        .entries(i)
        .filter(|&(j, _)| is_live(j as u32))
        .map(|(j, d)| (j as u32, d))
        .collect();
    while entries.len() < k {
        let j = live[rng.random_range(0..live.len())];
        if j != i && !entries.iter().any(|e| e.0 as usize == j) {
            entries.push((j as u32, dist(j)));
        }
    }
    table.set_row(i, &mut entries);
    true
}
