//! LD kernel, pairwise gradient and force evaluation.

mod exact;
mod forces;

pub use exact::{exact_descent, exact_loss_and_gradient, exact_z, DenseSchedule};
pub use forces::{approximate_forces, compute_forces, FarField, ForceField, ForceInputs, PointForces};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest squared LD distance used when evaluating pair terms.
pub const MIN_DIST2: f64 = 1e-12;
/// Redraws allowed for a negative sample that collides with a neighbour.
pub const NEGATIVE_REDRAWS: usize = 3;
pub const Z_SMOOTHING: f64 = 0.9;

/// An LD similarity kernel `w(d2)` together with the factor `w^{1/alpha}`
/// that multiplies `(y_i - y_j)` in the gradient.
pub trait Kernel: Sync {
    fn weight(&self, dist2: f64) -> f64;
    fn grad_factor(&self, dist2: f64) -> f64;

    /// `(weight, grad_factor)` in one evaluation.
    #[inline]
    fn weight_and_factor(&self, dist2: f64) -> (f64, f64) {
        (self.weight(dist2), self.grad_factor(dist2))
    }
}

/// `w = (1 + d2/alpha)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavyTailed {
    pub alpha: f64,
}

impl Kernel for HeavyTailed {
    #[inline]
    fn weight(&self, dist2: f64) -> f64 {
        if self.alpha == 1.0 {
            1.0 / (1.0 + dist2)
        } else {
            (-self.alpha * (dist2 / self.alpha).ln_1p()).exp()
        }
    }

    #[inline]
    fn grad_factor(&self, dist2: f64) -> f64 {
        1.0 / (1.0 + dist2 / self.alpha)
    }

    #[inline]
    fn weight_and_factor(&self, dist2: f64) -> (f64, f64) {
        if self.alpha == 1.0 {
            let w = 1.0 / (1.0 + dist2);
            (w, w)
        } else {
            (self.weight(dist2), self.grad_factor(dist2))
        }
    }
}

/// Heavy-tailed kernel value.
pub fn kernel_w(dist2: f64, alpha: f64) -> f64 {
    HeavyTailed { alpha }.weight(dist2)
}

/// Gradient contribution of `j` on `y_i`: `4 (p - q) w^{1/alpha} (y_i - y_j)`.
pub fn pair_gradient(yi: &[f64], yj: &[f64], p: f64, q: f64, alpha: f64) -> Vec<f64> {
    pair_gradient_with(yi, yj, p, q, &HeavyTailed { alpha })
}

pub fn pair_gradient_with<K: Kernel>(yi: &[f64], yj: &[f64], p: f64, q: f64, kernel: &K) -> Vec<f64> {
    let d2 = crate::matrix::sq_euclidean(yi, yj);
    let s = 4.0 * (p - q) * kernel.grad_factor(d2);
    yi.iter().zip(yj).map(|(a, b)| s * (a - b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub attraction_scale: f64,
    pub repulsion_scale: f64,
    pub n_negative: usize,
    pub exaggeration: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            attraction_scale: 1.0,
            repulsion_scale: 1.0,
            n_negative: 8,
            exaggeration: 1.0,
        }
    }
}

impl KernelParams {
    pub fn kernel(&self) -> HeavyTailed {
        HeavyTailed { alpha: self.alpha }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("attraction_scale", self.attraction_scale)?;
        positive("repulsion_scale", self.repulsion_scale)?;
        if self.n_negative == 0 {
            return Err(Error::param("n_negative", "must be at least 1"));
        }
        if !(self.exaggeration.is_finite() && self.exaggeration >= 1.0) {
            return Err(Error::param("exaggeration", "must be >= 1"));
        }
        Ok(())
    }
}

/// Early exaggeration schedule: `factor` for `hold_iters`, then a linear
/// ramp down to 1 over `decay_iters`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exaggeration {
    pub factor: f64,
    pub hold_iters: usize,
    pub decay_iters: usize,
}

impl Default for Exaggeration {
    fn default() -> Self {
        Self {
            factor: 4.0,
            hold_iters: 250,
            decay_iters: 50,
        }
    }
}

impl Exaggeration {
    pub fn none() -> Self {
        Self {
            factor: 1.0,
            hold_iters: 0,
            decay_iters: 0,
        }
    }

    pub fn at(&self, iteration: usize) -> f64 {
        if iteration < self.hold_iters {
            self.factor
        } else if iteration < self.hold_iters + self.decay_iters {
            let t = (iteration - self.hold_iters) as f64 / self.decay_iters as f64;
            self.factor + (1.0 - self.factor) * t
        } else {
            1.0
        }
    }
}

/// Running estimate of the kernel normaliser `sum_{k != l} w_kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEstimate {
    pub z: f64,
    pub smoothing: f64,
}

impl ZEstimate {
    pub fn new(initial: f64) -> Self {
        Self {
            z: initial,
            smoothing: Z_SMOOTHING,
        }
    }

    /// Folds in a fresh estimate; non-positive or non-finite samples are ignored.
    pub fn update(&mut self, sample: f64) {
        if sample.is_finite() && sample > 0.0 {
            self.z = if self.z > 0.0 {
                self.smoothing * self.z + (1.0 - self.smoothing) * sample
            } else {
                sample
            };
        }
    }
}
