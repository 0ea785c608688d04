use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;

use super::{Kernel, MIN_DIST2, NEGATIVE_REDRAWS};
use crate::affinity::AffinityStore;
use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::matrix::{sq_euclidean, Matrix};
use crate::rng::{stream_rng, Stream};

/// How the interactions beyond both neighbour sets are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FarField {
    /// Uniform negative samples, rescaled to the number of remaining points.
    Sampled { n_negative: usize },
    /// Every remaining live point (O(N) per point, reference use only).
    Exact,
}

/// Read-only state shared by all points during force evaluation.
pub struct ForceInputs<'a, K: Kernel> {
    /// `n_slots x d`; rows of dead slots are ignored.
    pub coords: &'a Matrix,
    pub live: &'a [usize],
    pub ld: &'a NeighborTable,
    pub aff: &'a AffinityStore,
    pub kernel: &'a K,
    /// Current normaliser estimate; `q_ij = w_ij / z`.
    pub z: f64,
    pub far: FarField,
    pub seed: u64,
    pub iteration: u64,
}

/// Separated force vectors of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForces {
    /// `4 sum p_ij w^{1/a} (y_j - y_i)`.
    pub attraction: Vec<f64>,
    /// `4 sum q_ij w^{1/a} (y_i - y_j)`.
    pub repulsion: Vec<f64>,
    /// Kernel mass seen from this point, far field rescaled.
    pub z_contrib: f64,
}

/// Per-slot force buffers for a whole iteration.
#[derive(Debug, Clone, Default)]
pub struct ForceField {
    dim: usize,
    pub attraction: Vec<f64>,
    pub repulsion: Vec<f64>,
    /// Estimate of `sum_{k != l} w_kl` from this evaluation.
    pub z_sum: f64,
}

impl ForceField {
    pub fn new(n_slots: usize, dim: usize) -> Self {
        Self {
            dim,
            attraction: vec![0.0; n_slots * dim],
            repulsion: vec![0.0; n_slots * dim],
            z_sum: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attraction(&self, i: usize) -> &[f64] {
        &self.attraction[i * self.dim..(i + 1) * self.dim]
    }

    pub fn repulsion(&self, i: usize) -> &[f64] {
        &self.repulsion[i * self.dim..(i + 1) * self.dim]
    }

    /// The loss gradient on `y_i`, i.e. `-(attraction + repulsion)`.
    pub fn gradient(&self, i: usize) -> Vec<f64> {
        self.attraction(i)
            .iter()
            .zip(self.repulsion(i))
            .map(|(a, r)| -(a + r))
            .collect()
    }

    fn reset(&mut self, n_slots: usize, dim: usize) {
        self.dim = dim;
        self.attraction.clear();
        self.attraction.resize(n_slots * dim, 0.0);
        self.repulsion.clear();
        self.repulsion.resize(n_slots * dim, 0.0);
        self.z_sum = 0.0;
    }
}

#[inline]
fn repel<K: Kernel>(kernel: &K, yi: &[f64], yj: &[f64], inv_z: f64, scale: f64, rep: &mut [f64]) -> f64 {
    let d2 = sq_euclidean(yi, yj).max(MIN_DIST2);
    let (w, f) = kernel.weight_and_factor(d2);
    let r = 4.0 * w * inv_z * f * scale;
    for ((o, a), b) in rep.iter_mut().zip(yi).zip(yj) {
        *o += r * (a - b);
    }
    w
}

static EVALUATIONS: AtomicU64 = AtomicU64::new(1);

thread_local! {
    /// Per-thread membership stamps, indexed by slot.
    static MARKS: RefCell<Vec<u64>> = const { RefCell::new(Vec::new()) };
}

/// A fresh id for one force evaluation; combined with the point index it
/// gives stamps that never repeat.
fn next_evaluation() -> u64 {
    EVALUATIONS.fetch_add(1, Ordering::Relaxed) << 32
}

fn point_forces<K: Kernel>(
    i: usize,
    inp: &ForceInputs<'_, K>,
    evaluation: u64,
    marks: &mut Vec<u64>,
    far: &mut Vec<f64>,
    attr: &mut [f64],
    rep: &mut [f64],
) -> f64 {
    attr.fill(0.0);
    rep.fill(0.0);
    let n_slots = inp.coords.rows();
    if marks.len() < n_slots {
        marks.resize(n_slots, 0);
    }
    let stamp = evaluation | (i as u64 + 1);
    marks[i] = stamp;
    let kernel = inp.kernel;
    let inv_z = if inp.z > 0.0 { 1.0 / inp.z } else { 0.0 };
    let yi = inp.coords.row(i);
    let mut z_contrib = 0.0;
    let mut near = 0usize;

    // HD pairs (symmetrised graph): attraction and repulsion.
    for (j, p) in inp.aff.sym_row(i) {
        marks[j] = stamp;
        near += 1;
        let yj = inp.coords.row(j);
        let d2 = sq_euclidean(yi, yj).max(MIN_DIST2);
        let (w, f) = kernel.weight_and_factor(d2);
        let a = 4.0 * p * f;
        let r = 4.0 * w * inv_z * f;
        for c in 0..yi.len() {
            let diff = yi[c] - yj[c];
            attr[c] -= a * diff;
            rep[c] += r * diff;
        }
        z_contrib += w;
    }

    // LD-only neighbours: repulsion.
    if inp.ld.is_active(i) {
        for &j in inp.ld.neighbors(i) {
            let j = j as usize;
            if marks[j] == stamp {
                continue;
            }
            marks[j] = stamp;
            near += 1;
            z_contrib += repel(kernel, yi, inp.coords.row(j), inv_z, 1.0, rep);
        }
    }

    // Everything else.
    let eligible = inp.live.len().saturating_sub(near + 1);
    if eligible == 0 {
        return z_contrib;
    }
    match inp.far {
        FarField::Exact => {
            for &j in inp.live {
                if marks[j] != stamp {
                    z_contrib += repel(kernel, yi, inp.coords.row(j), inv_z, 1.0, rep);
                }
            }
        }
        FarField::Sampled { n_negative } => {
            let mut rng = stream_rng(inp.seed, Stream::Forces, inp.iteration, i as u64);
            far.clear();
            far.resize(yi.len(), 0.0);
            let mut w_sum = 0.0;
            for _ in 0..n_negative {
                for _ in 0..=NEGATIVE_REDRAWS {
                    let j = inp.live[rng.random_range(0..inp.live.len())];
                    if marks[j] == stamp {
                        continue;
                    }
                    w_sum += repel(kernel, yi, inp.coords.row(j), inv_z, 1.0, far);
                    break;
                }
            }
            let scale = eligible as f64 / n_negative as f64;
            for (o, f) in rep.iter_mut().zip(far.iter()) {
                *o += scale * f;
            }
            z_contrib += scale * w_sum;
        }
    }
    z_contrib
}

/// Forces on a single point.
pub fn approximate_forces<K: Kernel>(i: usize, inputs: &ForceInputs<'_, K>) -> PointForces {
    let d = inputs.coords.cols();
    let mut attraction = vec![0.0; d];
    let mut repulsion = vec![0.0; d];
    let evaluation = next_evaluation();
    let z_contrib = MARKS.with_borrow_mut(|marks| {
        point_forces(
            i,
            inputs,
            evaluation,
            marks,
            &mut Vec::new(),
            &mut attraction,
            &mut repulsion,
        )
    });
    PointForces {
        attraction,
        repulsion,
        z_contrib,
    }
}

/// Forces on every live point, written into `out`. Fails on the first
/// point (lowest slot) whose forces are not finite.
pub fn compute_forces<K: Kernel>(inputs: &ForceInputs<'_, K>, out: &mut ForceField) -> Result<()> {
    let n_slots = inputs.coords.rows();
    let d = inputs.coords.cols();
    out.reset(n_slots, d);
    let evaluation = next_evaluation();
    let mut mask = vec![false; n_slots];
    for &i in inputs.live {
        mask[i] = true;
    }
    let z: Vec<f64> = out
        .attraction
        .par_chunks_mut(d)
        .zip(out.repulsion.par_chunks_mut(d))
        .enumerate()
        .map_init(Vec::new, |far, (i, (attr, rep))| {
            if mask[i] {
                MARKS.with_borrow_mut(|marks| point_forces(i, inputs, evaluation, marks, far, attr, rep))
            } else {
                0.0
            }
        })
        .collect();
    for &i in inputs.live {
        let finite = out.attraction(i).iter().chain(out.repulsion(i)).all(|v| v.is_finite());
        if !finite || !z[i].is_finite() {
            return Err(Error::NonFiniteForce {
                point: i,
                iteration: inputs.iteration,
            });
        }
    }
    out.z_sum = z.iter().sum();
    Ok(())
}
