//! Gaussian HD affinities over the sparse (approximate) neighbour graph.
//!
//! Each point gets a bandwidth `sigma_i` such that the perplexity of its
//! conditional distribution over its `K` HD neighbours matches the target.
//! Symmetrised similarities `p_ij = (p_{j|i} + p_{i|j}) / 2Z` are stored once
//! per unordered pair, so `p_ij == p_ji` holds bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::matrix::Matrix;

const LOG_SIGMA_MIN: f64 = -23.025_850_929_940_457; // ln(1e-10)
const LOG_SIGMA_MAX: f64 = 23.025_850_929_940_457; // ln(1e10)
pub const MAX_BISECTION_STEPS: usize = 64;
/// Relative perplexity residual at which bisection stops.
pub const BISECTION_TOLERANCE: f64 = 1e-7;
/// Residual above which a calibration is reported as not converged.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-2;
/// Full recomputation period of the normalisation total, in syncs.
pub const RENORMALIZE_EVERY: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// Realised perplexity `2^H` with `H` in bits.
    pub perplexity: f64,
    /// Number of perplexity evaluations.
    pub steps: usize,
    /// Target not reachable (all distances equal, single neighbour, or
    /// ties at the minimum); `sigma` is then only nominal.
    pub degenerate: bool,
}

/// Writes `p_{j|i}` for the given squared distances into `out` and returns
/// the entropy in bits.
pub fn conditional_probs(dist2: &[f64], sigma: f64, out: &mut [f64]) -> f64 {
    let dmin = dist2.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(dist2) {
        let shifted = (d - dmin) * scale;
        *o = (-shifted).exp();
        z += *o;
        weighted += *o * shifted;
    }
    let inv = 1.0 / z;
    out.iter_mut().for_each(|o| *o *= inv);
    // H = ln z + E[shifted], in bits.
    (z.ln() + weighted * inv) * std::f64::consts::LOG2_E
}

/// Finds `sigma` matching `perplexity` over the given squared distances by
/// bisection in `ln(sigma)`.
///
/// With a warm start the previous value is tried first, then the bracket
/// `[sigma/4, 4 sigma]`, before falling back to `[1e-10, 1e10]`.
pub fn calibrate_sigma(dist2: &[f64], perplexity: f64, warm_start: Option<f64>) -> Result<Calibration> {
    let mut probs = vec![0.0; dist2.len()];
    calibrate_into(dist2, perplexity, warm_start, &mut probs)
}

fn calibrate_into(dist2: &[f64], perplexity: f64, warm_start: Option<f64>, probs: &mut [f64]) -> Result<Calibration> {
    let k = dist2.len();
    if k == 0 {
        return Err(Error::Invalid("no neighbours to calibrate".into()));
    }
    if !perplexity.is_finite() || dist2.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Invalid("non-finite calibration input".into()));
    }
    let warm = warm_start.filter(|s| s.is_finite() && *s > 0.0);
    let dmin = dist2.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = dist2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if k == 1 || dmax == dmin {
        probs.fill(1.0 / k as f64);
        return Ok(Calibration {
            sigma: warm.unwrap_or(((LOG_SIGMA_MIN + LOG_SIGMA_MAX) / 2.0).exp()),
            perplexity: k as f64,
            steps: 0,
            degenerate: true,
        });
    }
    if perplexity <= 1.0 || perplexity >= k as f64 {
        return Err(Error::UnreachablePerplexity { perplexity, k });
    }

    let tol = BISECTION_TOLERANCE * perplexity;
    let eval = |log_sigma: f64, probs: &mut [f64]| conditional_probs(dist2, log_sigma.exp(), probs).exp2();
    let mut steps = 0;
    // (residual, ln sigma, perplexity) of the best evaluation so far.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut lo = LOG_SIGMA_MIN;
    let mut hi = LOG_SIGMA_MAX;
    let mut probe = |ls: f64, probs: &mut [f64], steps: &mut usize| {
        *steps += 1;
        let p = eval(ls, probs);
        if (p - perplexity).abs() < best.0 {
            best = ((p - perplexity).abs(), ls, p);
        }
        p
    };

    let mut converged = false;
    if let Some(s) = warm {
        let ls = s.ln().clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        let p = probe(ls, probs, &mut steps);
        if (p - perplexity).abs() <= tol {
            converged = true;
        } else {
            let near = if p > perplexity {
                hi = ls;
                (ls - 4f64.ln()).max(LOG_SIGMA_MIN)
            } else {
                lo = ls;
                (ls + 4f64.ln()).min(LOG_SIGMA_MAX)
            };
            let p = probe(near, probs, &mut steps);
            if (p - perplexity).abs() <= tol {
                converged = true;
            } else if p > perplexity {
                hi = hi.min(near);
            } else {
                lo = lo.max(near);
            }
        }
    }
    while !converged && steps < MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let p = probe(mid, probs, &mut steps);
        if (p - perplexity).abs() <= tol {
            converged = true;
        } else if p > perplexity {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (residual, ls, p) = best;
    conditional_probs(dist2, ls.exp(), probs);
    Ok(Calibration {
        sigma: ls.exp(),
        perplexity: p,
        steps,
        degenerate: residual > PERPLEXITY_TOLERANCE,
    })
}

#[derive(Debug, Clone, Copy)]
struct PairSlot {
    lo: u32,
    hi: u32,
    /// `p_{hi|lo}`, contributed by the row of `lo`.
    from_lo: f64,
    /// `p_{lo|hi}`, contributed by the row of `hi`.
    from_hi: f64,
    has_lo: bool,
    has_hi: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SyncReport {
    pub updated: usize,
    pub degenerate: usize,
    pub max_residual: f64,
}

/// Bandwidths, conditional rows and the symmetric pair store.
#[derive(Debug, Clone)]
pub struct AffinityStore {
    k: usize,
    perplexity: f64,
    sigma: Vec<f64>,
    calibrated: Vec<bool>,
    degenerate: Vec<bool>,
    realized: Vec<f64>,
    cond_idx: Vec<u32>,
    cond_p: Vec<f64>,
    slots: Vec<PairSlot>,
    free_slots: Vec<u32>,
    adj: Vec<Vec<(u32, u32)>>,
    total: f64,
    syncs: usize,
}

impl AffinityStore {
    pub fn new(n_slots: usize, k: usize, perplexity: f64) -> Self {
        Self {
            k,
            perplexity,
            sigma: vec![0.0; n_slots],
            calibrated: vec![false; n_slots],
            degenerate: vec![false; n_slots],
            realized: vec![0.0; n_slots],
            cond_idx: vec![u32::MAX; n_slots * k],
            cond_p: vec![0.0; n_slots * k],
            slots: Vec::new(),
            free_slots: Vec::new(),
            adj: vec![Vec::new(); n_slots],
            total: 0.0,
            syncs: 0,
        }
    }

    pub fn grow(&mut self, n_slots: usize) {
        if n_slots > self.sigma.len() {
            self.sigma.resize(n_slots, 0.0);
            self.calibrated.resize(n_slots, false);
            self.degenerate.resize(n_slots, false);
            self.realized.resize(n_slots, 0.0);
            self.cond_idx.resize(n_slots * self.k, u32::MAX);
            self.cond_p.resize(n_slots * self.k, 0.0);
            self.adj.resize(n_slots, Vec::new());
        }
    }

    pub fn perplexity(&self) -> f64 {
        self.perplexity
    }

    /// Takes effect at the next sync of each row.
    pub fn set_perplexity(&mut self, perplexity: f64) -> Result<()> {
        if !(perplexity > 1.0 && perplexity < self.k as f64) {
            return Err(Error::param(
                "perplexity",
                format!("must lie in (1, {}) for {} HD neighbours", self.k, self.k),
            ));
        }
        self.perplexity = perplexity;
        Ok(())
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    pub fn is_calibrated(&self, i: usize) -> bool {
        self.calibrated[i]
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    pub fn realized_perplexity(&self, i: usize) -> f64 {
        self.realized[i]
    }

    /// `p_{j|i}` row of `i` as (neighbour, probability).
    pub fn conditional_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = i * self.k..(i + 1) * self.k;
        let live = self.calibrated[i];
        self.cond_idx[r.clone()]
            .iter()
            .zip(&self.cond_p[r])
            .filter(move |_| live)
            .map(|(&j, &p)| (j as usize, p))
    }

    #[inline]
    fn norm(&self) -> f64 {
        if self.total > 0.0 {
            0.5 / self.total
        } else {
            0.0
        }
    }

    /// Running normaliser: total conditional mass, equal to the number of calibrated points.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Partners of `i` in the symmetrised graph (HD neighbours and reverse
    /// HD neighbours) together with `p_ij`.
    pub fn sym_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let norm = self.norm();
        self.adj[i].iter().map(move |&(j, s)| {
            let slot = &self.slots[s as usize];
            (j as usize, (slot.from_lo + slot.from_hi) * norm)
        })
    }

    pub fn sym_degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Sorted partner indices of `i`.
    pub fn sym_partners(&self, i: usize, out: &mut Vec<u32>) {
        out.clear();
        out.extend(self.adj[i].iter().map(|&(j, _)| j));
        out.sort_unstable();
    }

    pub fn p_ij(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .iter()
            .find(|&&(p, _)| p as usize == j)
            .map_or(0.0, |&(_, s)| {
                let slot = &self.slots[s as usize];
                (slot.from_lo + slot.from_hi) * self.norm()
            })
    }

    fn find_slot(&self, i: usize, j: usize) -> Option<u32> {
        self.adj[i].iter().find(|&&(p, _)| p as usize == j).map(|&(_, s)| s)
    }

    fn add_contribution(&mut self, i: usize, j: usize, p: f64) {
        let s = match self.find_slot(i, j) {
            Some(s) => s,
            None => {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                let slot = PairSlot {
                    lo: lo as u32,
                    hi: hi as u32,
                    from_lo: 0.0,
                    from_hi: 0.0,
                    has_lo: false,
                    has_hi: false,
                };
                let s = match self.free_slots.pop() {
                    Some(s) => {
                        self.slots[s as usize] = slot;
                        s
                    }
                    None => {
                        self.slots.push(slot);
                        (self.slots.len() - 1) as u32
                    }
                };
                self.adj[i].push((j as u32, s));
                self.adj[j].push((i as u32, s));
                s
            }
        };
        let slot = &mut self.slots[s as usize];
        if slot.lo as usize == i {
            slot.from_lo = p;
            slot.has_lo = true;
        } else {
            slot.from_hi = p;
            slot.has_hi = true;
        }
    }

    fn remove_contribution(&mut self, i: usize, j: usize) {
        let Some(s) = self.find_slot(i, j) else {
            return;
        };
        let slot = &mut self.slots[s as usize];
        if slot.lo as usize == i {
            slot.from_lo = 0.0;
            slot.has_lo = false;
        } else {
            slot.from_hi = 0.0;
            slot.has_hi = false;
        }
        if !slot.has_lo && !slot.has_hi {
            self.free_slots.push(s);
            for (a, b) in [(i, j), (j, i)] {
                let pos = self.adj[a].iter().position(|&(p, _)| p as usize == b).unwrap();
                self.adj[a].swap_remove(pos);
            }
        }
    }

    fn clear_row(&mut self, i: usize) {
        if !self.calibrated[i] {
            return;
        }
        let r = i * self.k..(i + 1) * self.k;
        let old: Vec<(u32, f64)> = self.cond_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.cond_p[r.clone()].iter().copied())
            .collect();
        for &(j, p) in &old {
            self.remove_contribution(i, j as usize);
            self.total -= p;
        }
        self.cond_idx[r.clone()].fill(u32::MAX);
        self.cond_p[r].fill(0.0);
        self.calibrated[i] = false;
    }

    /// Drops the conditional row of a removed point. Rows of other points that
    /// referenced it must be resynced by the caller.
    pub fn remove_point(&mut self, i: usize) {
        self.clear_row(i);
        self.degenerate[i] = false;
        self.sigma[i] = 0.0;
    }

    /// Recalibrates dirty rows of `table` (or all active rows) and refreshes
    /// their pair contributions. Clears the dirty flags of synced rows.
    pub fn sync(&mut self, table: &mut NeighborTable, only_dirty: bool) -> Result<SyncReport> {
        assert_eq!(table.k(), self.k, "table and affinity store disagree on K");
        self.grow(table.n_slots());
        let rows: Vec<usize> = if only_dirty {
            table.dirty_rows()
        } else {
            (0..table.n_slots()).filter(|&i| table.is_active(i)).collect()
        };
        if rows.is_empty() {
            return Ok(SyncReport::default());
        }
        let perplexity = self.perplexity;
        let results: Vec<Result<(Calibration, Vec<f64>)>> = {
            let table = &*table;
            let sigma = &self.sigma;
            let calibrated = &self.calibrated;
            rows.par_iter()
                .map(|&i| {
                    let mut probs = vec![0.0; table.k()];
                    let warm = calibrated[i].then_some(sigma[i]);
                    calibrate_into(table.distances(i), perplexity, warm, &mut probs)
                        .map(|c| (c, probs))
                        .map_err(|e| Error::Calibration {
                            point: i,
                            reason: e.to_string(),
                        })
                })
                .collect()
        };
        let mut report = SyncReport::default();
        for (&i, res) in rows.iter().zip(results) {
            let (cal, probs) = res?;
            self.clear_row(i);
            let r = i * self.k..(i + 1) * self.k;
            self.cond_idx[r.clone()].copy_from_slice(table.neighbors(i));
            self.cond_p[r].copy_from_slice(&probs);
            for (&j, &p) in table.neighbors(i).iter().zip(&probs) {
                self.add_contribution(i, j as usize, p);
                self.total += p;
            }
            self.sigma[i] = cal.sigma;
            self.realized[i] = cal.perplexity;
            self.degenerate[i] = cal.degenerate;
            self.calibrated[i] = true;
            table.clear_dirty(i);
            report.updated += 1;
            report.degenerate += cal.degenerate as usize;
            if !cal.degenerate {
                report.max_residual = report.max_residual.max((cal.perplexity - perplexity).abs());
            }
        }
        self.syncs += 1;
        if self.syncs.is_multiple_of(RENORMALIZE_EVERY) {
            self.recompute_total();
        }
        Ok(report)
    }

    pub fn recompute_total(&mut self) {
        self.total = (0..self.calibrated.len())
            .filter(|&i| self.calibrated[i])
            .map(|i| self.cond_p[i * self.k..(i + 1) * self.k].iter().sum::<f64>())
            .sum();
    }

    /// Dense `p` over `ids` (row/column order follows `ids`).
    pub fn dense_p(&self, ids: &[usize]) -> Matrix {
        let mut pos = vec![usize::MAX; self.adj.len()];
        for (r, &i) in ids.iter().enumerate() {
            pos[i] = r;
        }
        let mut m = Matrix::zeros(ids.len(), ids.len());
        for (r, &i) in ids.iter().enumerate() {
            for (j, p) in self.sym_row(i) {
                if pos[j] != usize::MAX {
                    m[(r, pos[j])] = p;
                }
            }
        }
        m
    }

    /// Sum of `p_ij` over ordered pairs.
    pub fn total_p(&self) -> f64 {
        let norm = self.norm();
        // Freed slots hold zero mass.
        self.slots
            .iter()
            .map(|slot| 2.0 * (slot.from_lo + slot.from_hi) * norm)
            .sum()
    }

    /// Checks calibration, symmetry, normalisation and referential integrity
    /// against the HD table. Rows still flagged dirty are only checked for
    /// integrity.
    pub fn check_invariants(&self, table: &NeighborTable, live: impl Fn(usize) -> bool) -> Result<(), String> {
        for i in 0..table.n_slots() {
            if !live(i) {
                if self.calibrated.get(i).copied().unwrap_or(false) {
                    return Err(format!("dead point {i} still calibrated"));
                }
                if self.adj.get(i).is_some_and(|a| !a.is_empty()) {
                    return Err(format!("dead point {i} has pair entries"));
                }
                continue;
            }
            if !self.calibrated[i] {
                if table.is_dirty(i) {
                    continue;
                }
                return Err(format!("live point {i} is neither calibrated nor dirty"));
            }
            let sum: f64 = self.conditional_row(i).map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(format!("row {i} sums to {sum}"));
            }
            for (j, p) in self.conditional_row(i) {
                if !live(j) {
                    return Err(format!("row {i} references dead {j}"));
                }
                if p.is_nan() || p < 0.0 {
                    return Err(format!("row {i} has negative p"));
                }
            }
            if !table.is_dirty(i) {
                if self.cond_idx[i * self.k..(i + 1) * self.k] != *table.neighbors(i) {
                    return Err(format!("row {i} out of sync with its HD row"));
                }
                if !self.degenerate[i] && (self.realized[i] - self.perplexity).abs() > PERPLEXITY_TOLERANCE {
                    return Err(format!(
                        "row {i} perplexity {} vs target {}",
                        self.realized[i], self.perplexity
                    ));
                }
            }
            for &(j, s) in &self.adj[i] {
                let slot = &self.slots[s as usize];
                let (lo, hi) = (slot.lo as usize, slot.hi as usize);
                if !((lo == i && hi == j as usize) || (hi == i && lo == j as usize)) {
                    return Err(format!("pair slot mismatch for ({i},{j})"));
                }
                if !live(j as usize) {
                    return Err(format!("pair ({i},{j}) references a dead point"));
                }
            }
        }
        let total = self.total_p();
        if self.total > 0.0 && (total - 1.0).abs() > 1e-6 {
            return Err(format!("p sums to {total}"));
        }
        Ok(())
    }
}
