//! The interleaved optimiser.
//!
//! Every iteration refines the LD neighbour table, refines the HD table with
//! an adaptive probability (resyncing affinities of rows that changed),
//! evaluates the split forces and applies a momentum step.

mod mutate;
mod projection;

pub use mutate::{ParamValue, INSERT_JITTER, INSERT_PROBES, PARAM_NAMES};
pub use projection::{Projection, ProjectionKind};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityStore;
use crate::dataspace::DatasetStore;
use crate::error::{Error, Result};
use crate::gradient::{
    compute_forces, exact_z, Exaggeration, FarField, ForceField, ForceInputs, KernelParams, ZEstimate,
};
use crate::knn::{
    init_tables, refine_pass, refine_probability, NeighborTable, PoolQuotas, RefineContext, RefineStats, Space,
};
use crate::matrix::{sq_euclidean, Matrix};
use crate::rng::{stream_rng, Stream};

/// When the HD table is refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HdRefineMode {
    /// With probability `0.05 + 0.95 * fraction_new`, drawn once per iteration.
    #[default]
    Adaptive,
    Always,
    Never,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionConfig {
    pub dim: usize,
    pub kernel: KernelParams,
    pub perplexity: f64,
    pub k_hd: usize,
    pub k_ld: usize,
    /// `None` picks `max(N / 12, 1)` at session start.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub exaggeration: Exaggeration,
    pub jumpstart_iters: usize,
    pub jumpstart_kind: ProjectionKind,
    pub seed: u64,
    pub candidate_budget: usize,
    pub quotas: PoolQuotas,
    pub hd_refine: HdRefineMode,
    /// Enumerate the far field and use the exact normaliser (reference runs).
    pub exact_far_field: bool,
    /// Standard deviation of the initial Gaussian coordinates.
    pub init_scale: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            kernel: KernelParams::default(),
            perplexity: 30.0,
            k_hd: 32,
            k_ld: 16,
            learning_rate: None,
            momentum: 0.8,
            exaggeration: Exaggeration::default(),
            jumpstart_iters: 0,
            jumpstart_kind: ProjectionKind::Pca,
            seed: 0,
            candidate_budget: 8,
            quotas: PoolQuotas::default(),
            hd_refine: HdRefineMode::Adaptive,
            exact_far_field: false,
            init_scale: 1e-2,
        }
    }
}

impl SessionConfig {
    pub fn auto_learning_rate(n: usize) -> f64 {
        (n as f64 / 12.0).max(1.0)
    }

    pub fn validate(&self, n_live: usize) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        for (k, name) in [(self.k_hd, "k_hd"), (self.k_ld, "k_ld")] {
            if k == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
            if k >= n_live {
                return Err(Error::CapacityBound { k, n: n_live });
            }
        }
        if !(self.perplexity > 1.0 && self.perplexity < self.k_hd as f64) {
            return Err(Error::param(
                "perplexity",
                format!("{} not in (1, k_hd = {})", self.perplexity, self.k_hd),
            ));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::param("learning_rate", "must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::param("init_scale", "must be > 0"));
        }
        let e = &self.exaggeration;
        if !(e.factor.is_finite() && e.factor >= 1.0) {
            return Err(Error::param("exaggeration", "factor must be >= 1"));
        }
        self.kernel.validate()
    }
}

/// Summary of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// Completed iterations, this one included.
    pub iteration: u64,
    pub hd_refined: bool,
    pub hd_changed: usize,
    pub ld_changed: usize,
    pub synced: usize,
    pub fraction_new: f64,
    pub jumpstart: bool,
    pub exaggeration: f64,
    /// Mean norm of the attractive and repulsive vectors over live points.
    pub attraction_norm: f64,
    pub repulsion_norm: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub alpha: f64,
    /// Live points in ascending slot order.
    pub ids: Vec<usize>,
    pub coords: Matrix,
}

pub struct Session {
    config: SessionConfig,
    learning_rate: f64,
    store: DatasetStore,
    hd: NeighborTable,
    ld: NeighborTable,
    hd_snap: NeighborTable,
    ld_snap: NeighborTable,
    aff: AffinityStore,
    coords: Matrix,
    velocity: Vec<f64>,
    z: ZEstimate,
    stats: RefineStats,
    iteration: u64,
    hd_passes: u64,
    live: Vec<usize>,
    forces: ForceField,
    projection: Option<Projection>,
    exaggeration_now: f64,
}

impl Session {
    pub fn new(store: DatasetStore, config: SessionConfig) -> Result<Self> {
        let live = store.sorted_live_indices();
        config.validate(live.len())?;
        let n_slots = store.n_slots();
        let d = config.dim;
        let mut coords = Matrix::zeros(n_slots, d);
        for &i in &live {
            let mut rng = stream_rng(config.seed, Stream::Init, 7, i as u64);
            for v in coords.row_mut(i) {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = config.init_scale * g;
            }
        }
        let (mut hd, ld) = {
            let c = &coords;
            init_tables(
                n_slots,
                &live,
                config.k_hd,
                config.k_ld,
                config.seed,
                &|i, j| store.dist2(i, j),
                &|i, j| sq_euclidean(c.row(i), c.row(j)),
            )?
        };
        let mut aff = AffinityStore::new(n_slots, config.k_hd, config.perplexity);
        aff.sync(&mut hd, false)?;
        let projection = if config.jumpstart_iters > 0 {
            Some(Projection::fit(&store, d, config.jumpstart_kind, config.seed)?)
        } else {
            None
        };
        let learning_rate = config
            .learning_rate
            .unwrap_or_else(|| SessionConfig::auto_learning_rate(live.len()));
        let mut session = Self {
            learning_rate,
            hd_snap: NeighborTable::new(0, config.k_hd),
            ld_snap: NeighborTable::new(0, config.k_ld),
            velocity: vec![0.0; n_slots * d],
            z: ZEstimate::new(0.0),
            stats: RefineStats::default(),
            iteration: 0,
            hd_passes: 0,
            forces: ForceField::new(n_slots, d),
            exaggeration_now: config.exaggeration.at(0),
            config,
            store,
            hd,
            ld,
            aff,
            coords,
            live,
            projection,
        };
        session.reestimate_z()?;
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn store(&self) -> &DatasetStore {
        &self.store
    }

    pub fn hd_table(&self) -> &NeighborTable {
        &self.hd
    }

    pub fn ld_table(&self) -> &NeighborTable {
        &self.ld
    }

    pub fn affinities(&self) -> &AffinityStore {
        &self.aff
    }

    /// Slot-indexed coordinates (rows of dead slots are zero).
    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Live coordinates in ascending slot order, with their slots.
    pub fn live_coords(&self) -> (Matrix, Vec<usize>) {
        (self.coords.select_rows(&self.live), self.live.clone())
    }

    pub fn live(&self) -> &[usize] {
        &self.live
    }

    pub fn n_live(&self) -> usize {
        self.live.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn hd_passes(&self) -> u64 {
        self.hd_passes
    }

    pub fn z(&self) -> &ZEstimate {
        &self.z
    }

    pub fn stats(&self) -> &RefineStats {
        &self.stats
    }

    pub fn exaggeration(&self) -> f64 {
        self.exaggeration_now
    }

    pub fn forces(&self) -> &ForceField {
        &self.forces
    }

    pub fn take_snapshot(&self) -> Snapshot {
        let (coords, ids) = self.live_coords();
        Snapshot {
            iteration: self.iteration,
            alpha: self.config.kernel.alpha,
            ids,
            coords,
        }
    }

    fn far_field(&self) -> FarField {
        if self.config.exact_far_field {
            FarField::Exact
        } else {
            FarField::Sampled {
                n_negative: self.config.kernel.n_negative,
            }
        }
    }

    fn evaluate_forces(&mut self, z: f64) -> Result<()> {
        let kernel = self.config.kernel.kernel();
        let inputs = ForceInputs {
            coords: &self.coords,
            live: &self.live,
            ld: &self.ld,
            aff: &self.aff,
            kernel: &kernel,
            z,
            far: self.far_field(),
            seed: self.config.seed,
            iteration: self.iteration,
        };
        compute_forces(&inputs, &mut self.forces)
    }

    /// Resets the normaliser from the current coordinates.
    pub(crate) fn reestimate_z(&mut self) -> Result<()> {
        let z = if self.config.exact_far_field {
            exact_z(&self.coords, &self.live, &self.config.kernel.kernel())
        } else {
            self.evaluate_forces(1.0)?;
            self.forces.z_sum
        };
        self.z = ZEstimate::new(z);
        Ok(())
    }

    fn refine_ld(&mut self) -> usize {
        let coords = &self.coords;
        let ctx = RefineContext {
            space: Space::Ld,
            budget: self.config.candidate_budget,
            quotas: self.config.quotas,
            live: &self.live,
            seed: self.config.seed,
            pass: self.iteration,
            refresh: true,
        };
        refine_pass(&mut self.ld, &mut self.ld_snap, &self.hd, &ctx, &|i, j| {
            sq_euclidean(coords.row(i), coords.row(j))
        })
    }

    fn refine_hd(&mut self) -> usize {
        let store = &self.store;
        let ctx = RefineContext {
            space: Space::Hd,
            budget: self.config.candidate_budget,
            quotas: self.config.quotas,
            live: &self.live,
            seed: self.config.seed,
            pass: self.iteration,
            refresh: false,
        };
        refine_pass(&mut self.hd, &mut self.hd_snap, &self.ld, &ctx, &|i, j| {
            store.dist2(i, j)
        })
    }

    fn hd_due(&self) -> bool {
        match self.config.hd_refine {
            HdRefineMode::Always => true,
            HdRefineMode::Never => false,
            HdRefineMode::Adaptive => {
                let mut rng = stream_rng(self.config.seed, Stream::Schedule, self.iteration, 0);
                rng.random::<f64>() < refine_probability(&self.stats)
            }
        }
    }

    /// Runs one iteration. On non-finite forces or coordinates the
    /// coordinates and velocity keep their pre-step values.
    pub fn step(&mut self) -> Result<IterationReport> {
        let ld_changed = self.refine_ld();
        let hd_refined = self.hd_due();
        let (mut hd_changed, mut synced) = (0, 0);
        if hd_refined {
            hd_changed = self.refine_hd();
            self.stats.record_pass(hd_changed, self.live.len());
            self.hd_passes += 1;
            synced = self.aff.sync(&mut self.hd, true)?.updated;
        }

        let jumpstart = (self.iteration as usize) < self.config.jumpstart_iters && self.projection.is_some();
        let mut report = IterationReport {
            iteration: self.iteration + 1,
            hd_refined,
            hd_changed,
            ld_changed,
            synced,
            fraction_new: self.stats.fraction_new,
            jumpstart,
            exaggeration: 1.0,
            attraction_norm: 0.0,
            repulsion_norm: 0.0,
            z: self.z.z,
        };
        if jumpstart {
            self.jumpstart_step();
            self.iteration += 1;
            if self.iteration as usize == self.config.jumpstart_iters {
                self.reestimate_z()?;
            }
            report.z = self.z.z;
            return Ok(report);
        }

        let since = (self.iteration as usize).saturating_sub(self.config.jumpstart_iters);
        let exag = self.config.exaggeration.at(since);
        self.exaggeration_now = exag;
        self.config.kernel.exaggeration = exag;
        let z = if self.config.exact_far_field {
            exact_z(&self.coords, &self.live, &self.config.kernel.kernel())
        } else {
            self.z.z
        };
        self.evaluate_forces(z)?;
        self.apply_update(exag)?;
        if self.config.exact_far_field {
            self.z = ZEstimate::new(z);
        } else {
            self.z.update(self.forces.z_sum);
        }
        self.iteration += 1;

        let d = self.config.dim;
        let norm = |v: &[f64], i: usize| v[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt();
        let n = self.live.len().max(1) as f64;
        report.exaggeration = exag;
        report.attraction_norm = self.live.iter().map(|&i| norm(&self.forces.attraction, i)).sum::<f64>() / n;
        report.repulsion_norm = self.live.iter().map(|&i| norm(&self.forces.repulsion, i)).sum::<f64>() / n;
        report.z = self.z.z;
        Ok(report)
    }

    fn apply_update(&mut self, exaggeration: f64) -> Result<()> {
        let d = self.config.dim;
        let a_scale = self.config.kernel.attraction_scale * exaggeration;
        let r_scale = self.config.kernel.repulsion_scale;
        let (lr, mu) = (self.learning_rate, self.config.momentum);
        let velocity =
            |k: usize, v: f64| mu * v + lr * (a_scale * self.forces.attraction[k] + r_scale * self.forces.repulsion[k]);
        for &i in &self.live {
            for k in i * d..(i + 1) * d {
                let v = velocity(k, self.velocity[k]);
                if !(v.is_finite() && (self.coords.as_slice()[k] + v).is_finite()) {
                    return Err(Error::NonFiniteForce {
                        point: i,
                        iteration: self.iteration,
                    });
                }
            }
        }
        let (forces, velocity_buf, coords) = (&self.forces, &mut self.velocity, self.coords.as_mut_slice());
        for &i in &self.live {
            for k in i * d..(i + 1) * d {
                let v = mu * velocity_buf[k] + lr * (a_scale * forces.attraction[k] + r_scale * forces.repulsion[k]);
                velocity_buf[k] = v;
                coords[k] += v;
            }
        }
        Ok(())
    }

    fn jumpstart_step(&mut self) {
        let Some(proj) = &self.projection else {
            return;
        };
        let mut target = vec![0.0; self.config.dim];
        for &i in &self.live {
            proj.project(self.store.row(i), &mut target);
            for (y, t) in self.coords.row_mut(i).iter_mut().zip(&target) {
                *y = 0.9 * *y + 0.1 * t;
            }
        }
    }

    /// Projection used by jump-start steps, when enabled.
    pub fn projection(&self) -> Option<&Projection> {
        self.projection.as_ref()
    }

    /// Full consistency sweep over tables, affinities and coordinates.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let live = |i: usize| self.store.is_live(i);
        let store = &self.store;
        self.hd
            .check_invariants(live, Some(&|i, j| store.dist2(i, j)))
            .map_err(|e| format!("HD table: {e}"))?;
        self.ld
            .check_invariants(live, None)
            .map_err(|e| format!("LD table: {e}"))?;
        self.aff
            .check_invariants(&self.hd, live)
            .map_err(|e| format!("affinities: {e}"))?;
        let d = self.config.dim;
        for i in 0..self.store.n_slots() {
            let row = &self.coords.as_slice()[i * d..(i + 1) * d];
            if live(i) {
                if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                    return Err(format!("coordinate of {i} is {v}"));
                }
            } else if self.velocity[i * d..(i + 1) * d].iter().any(|&v| v != 0.0) {
                return Err(format!("dead slot {i} has velocity"));
            }
        }
        if self.live != self.store.sorted_live_indices() {
            return Err("live cache out of sync".into());
        }
        if !(self.z.z > 0.0 && self.z.z.is_finite()) {
            return Err(format!("normaliser is {}", self.z.z));
        }
        Ok(())
    }
}
