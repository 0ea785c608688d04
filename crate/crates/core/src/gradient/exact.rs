//! Dense O(N^2) reference: exact normaliser, KL loss, gradient, and a
//! full-batch optimiser.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Exaggeration, HeavyTailed, Kernel};
use crate::error::{Error, Result};
use crate::matrix::{sq_euclidean, Matrix};

/// `sum_{k != l} w_kl` over the listed rows.
pub fn exact_z<K: Kernel>(coords: &Matrix, live: &[usize], kernel: &K) -> f64 {
    let per_row: Vec<f64> = live
        .par_iter()
        .map(|&i| {
            let yi = coords.row(i);
            live.iter()
                .filter(|&&j| j != i)
                .map(|&j| kernel.weight(sq_euclidean(yi, coords.row(j))))
                .sum()
        })
        .collect();
    per_row.iter().sum()
}

fn check_p(p: &Matrix, n: usize) -> Result<()> {
    if p.rows() != n || p.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.rows(),
        });
    }
    let total: f64 = p.as_slice().iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// KL(P || Q) and its gradient with respect to every row of `coords`.
pub fn exact_loss_and_gradient(coords: &Matrix, p: &Matrix, alpha: f64) -> Result<(f64, Matrix)> {
    let n = coords.rows();
    check_p(p, n)?;
    let kernel = HeavyTailed { alpha };
    let all: Vec<usize> = (0..n).collect();
    let z = exact_z(coords, &all, &kernel);
    let d = coords.cols();
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = coords.row(i);
            let mut g = vec![0.0; d];
            let mut kl = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let yj = coords.row(j);
                let d2 = sq_euclidean(yi, yj);
                let q = kernel.weight(d2) / z;
                let pij = p[(i, j)];
                if pij > 0.0 {
                    kl += pij * (pij / q).ln();
                }
                let s = 4.0 * (pij - q) * kernel.grad_factor(d2);
                for c in 0..d {
                    g[c] += s * (yi[c] - yj[c]);
                }
            }
            (kl, g)
        })
        .collect();
    let mut grad = Matrix::zeros(n, d);
    let mut kl = 0.0;
    for (i, (k, g)) in rows.into_iter().enumerate() {
        kl += k;
        grad.row_mut(i).copy_from_slice(&g);
    }
    Ok((kl, grad))
}

/// Settings for [`exact_descent`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DenseSchedule {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub exaggeration: Exaggeration,
    pub attraction_scale: f64,
    pub repulsion_scale: f64,
}

/// Full-batch gradient descent with the same update rule as the online
/// optimiser, using exact attraction and repulsion.
pub fn exact_descent(p: &Matrix, init: &Matrix, alpha: f64, schedule: &DenseSchedule) -> Result<Matrix> {
    let n = init.rows();
    check_p(p, n)?;
    let d = init.cols();
    let kernel = HeavyTailed { alpha };
    let all: Vec<usize> = (0..n).collect();
    let mut y = init.clone();
    let mut velocity = vec![0.0; n * d];
    for it in 0..schedule.iterations {
        let z = exact_z(&y, &all, &kernel);
        let exag = schedule.exaggeration.at(it);
        let ys = &y;
        let steps: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let yi = ys.row(i);
                let mut a = vec![0.0; d];
                let mut r = vec![0.0; d];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let yj = ys.row(j);
                    let d2 = sq_euclidean(yi, yj).max(super::MIN_DIST2);
                    let f = kernel.grad_factor(d2);
                    let pa = 4.0 * p[(i, j)] * f;
                    let qr = 4.0 * kernel.weight(d2) / z * f;
                    for c in 0..d {
                        let diff = yi[c] - yj[c];
                        a[c] -= pa * diff;
                        r[c] += qr * diff;
                    }
                }
                (0..d).map(move |c| schedule.attraction_scale * exag * a[c] + schedule.repulsion_scale * r[c])
            })
            .collect();
        for ((v, s), yv) in velocity.iter_mut().zip(&steps).zip(y.as_mut_slice()) {
            *v = schedule.momentum * *v + schedule.learning_rate * s;
            *yv += *v;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_instance(n: usize, d: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = seeded(seed);
        let y = Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect());
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = if rng.random::<f64>() < 0.3 { rng.random() } else { 0.0 };
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
        let s: f64 = p.as_slice().iter().sum();
        p.as_mut_slice().iter_mut().for_each(|v| *v /= s);
        (y, p)
    }

    fn q_matrix(y: &Matrix, alpha: f64) -> Matrix {
        let n = y.rows();
        let mut q = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    q[(i, j)] = super::super::kernel_w(sq_euclidean(y.row(i), y.row(j)), alpha);
                }
            }
        }
        let s: f64 = q.as_slice().iter().sum();
        q.as_mut_slice().iter_mut().for_each(|v| *v /= s);
        q
    }

    #[test]
    fn kl_vanishes_when_q_equals_p() {
        let (y, _) = random_instance(12, 2, 1);
        let q = q_matrix(&y, 0.8);
        let (kl, _) = exact_loss_and_gradient(&y, &q, 0.8).unwrap();
        assert!(kl.abs() < 1e-12, "{kl}");
    }

    #[test]
    fn kl_is_non_negative() {
        for s in 0..1000 {
            let (y, p) = random_instance(6, 2, 1000 + s);
            let alpha = 0.2 + (s % 7) as f64 * 0.5;
            let (kl, _) = exact_loss_and_gradient(&y, &p, alpha).unwrap();
            assert!(kl >= -1e-12, "{kl}");
        }
    }

    #[test]
    fn rejects_unnormalised_p() {
        let (y, mut p) = random_instance(5, 2, 3);
        p[(0, 1)] += 0.1;
        assert!(matches!(
            exact_loss_and_gradient(&y, &p, 1.0),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (y, p) = random_instance(30, 2, 4);
        let (_, g) = exact_loss_and_gradient(&y, &p, 0.5).unwrap();
        let h = 1e-5;
        let mut max_err: f64 = 0.0;
        for i in 0..30 {
            for c in 0..2 {
                let mut yp = y.clone();
                yp[(i, c)] += h;
                let mut ym = y.clone();
                ym[(i, c)] -= h;
                let fd = (exact_loss_and_gradient(&yp, &p, 0.5).unwrap().0
                    - exact_loss_and_gradient(&ym, &p, 0.5).unwrap().0)
                    / (2.0 * h);
                let err = (fd - g[(i, c)]).abs() / g[(i, c)].abs().max(1e-3);
                max_err = max_err.max(err);
            }
        }
        assert!(max_err < 1e-4, "{max_err}");
    }

    #[test]
    fn descent_decreases_loss() {
        let (y0, p) = random_instance(40, 2, 5);
        let sched = DenseSchedule {
            iterations: 50,
            learning_rate: 1.0,
            momentum: 0.0,
            exaggeration: Exaggeration::none(),
            attraction_scale: 1.0,
            repulsion_scale: 1.0,
        };
        let y = exact_descent(&p, &y0, 1.0, &sched).unwrap();
        let before = exact_loss_and_gradient(&y0, &p, 1.0).unwrap().0;
        let after = exact_loss_and_gradient(&y, &p, 1.0).unwrap().0;
        assert!(after < before, "{after} >= {before}");
    }
}
