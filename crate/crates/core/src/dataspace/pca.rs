//! Linear pre-reduction by power iteration on the covariance matrix.
//!
//! Each component is found by power iteration restricted to the orthogonal
//! complement of the components already extracted (deflation by projection).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetStore;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::seeded;

pub const PCA_MAX_ITERS: usize = 100;
/// Relative change of the Rayleigh quotient below which a component is accepted.
pub const PCA_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `c x M`, orthonormal rows.
    pub components: Matrix,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let comp = self.components.row(c);
            *o = x
                .iter()
                .zip(&self.mean)
                .zip(comp)
                .map(|((xi, mi), wi)| (xi - mi) * wi)
                .sum();
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_components()];
        self.transform_into(x, &mut out);
        out
    }

    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 0.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }
}

fn covariance(store: &DatasetStore, ids: &[usize]) -> (Vec<f64>, Matrix) {
    let m = store.dim();
    let n = ids.len();
    let mut mean = vec![0.0; m];
    for &i in ids {
        for (acc, v) in mean.iter_mut().zip(store.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = Matrix::zeros(m, m);
    let mut centred = vec![0.0; m];
    for &i in ids {
        for ((c, x), mu) in centred.iter_mut().zip(store.row(i)).zip(&mean) {
            *c = x - mu;
        }
        for a in 0..m {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            let row = cov.row_mut(a);
            for b in a..m {
                row[b] += ca * centred[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..m {
        for b in a..m {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

fn mat_vec(a: &Matrix, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(r), v);
    }
}

/// Removes the projections of `v` on the given orthonormal rows; applied
/// twice for numerical orthogonality.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Any unit vector orthogonal to `basis`, used for null directions.
fn completion(m: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; m];
    let mut best_norm = -1.0;
    for e in 0..m {
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        orthogonalize(&mut v, basis);
        let n = dot(&v, &v);
        if n > best_norm {
            best_norm = n;
            best = v;
        }
    }
    normalize(&mut best);
    best
}

/// Projects the live points on their first `c` principal components.
///
/// Returns the model and a new store holding the `N x c` scores, in the same
/// slot order as the live points of `store`.
pub fn pca_reduce(store: &DatasetStore, c: usize) -> Result<(PcaModel, DatasetStore)> {
    let ids = store.sorted_live_indices();
    let n = ids.len();
    let m = store.dim();
    if c == 0 || c > n.min(m) {
        return Err(Error::param("components", format!("{c} not in 1..={}", n.min(m))));
    }
    let (mean, cov) = covariance(store, &ids);
    let total_variance: f64 = (0..m).map(|a| cov[(a, a)]).sum();
    if total_variance == 0.0 {
        return Err(Error::Degenerate("zero variance in every direction".into()));
    }

    let mut rng = seeded(0x0005_eed0_f9ca);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut variances = Vec::with_capacity(c);
    let mut w = vec![0.0; m];
    for _ in 0..c {
        let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, &basis);
        if normalize(&mut v) == 0.0 {
            v = completion(m, &basis);
        }
        let mut lambda = 0.0;
        for it in 0..PCA_MAX_ITERS {
            mat_vec(&cov, &v, &mut w);
            orthogonalize(&mut w, &basis);
            let rq = dot(&v, &w);
            let norm = normalize(&mut w);
            if norm <= total_variance * 1e-15 {
                // Remaining directions carry no variance.
                v = completion(m, &basis);
                break;
            }
            std::mem::swap(&mut v, &mut w);
            let converged = it > 0 && (rq - lambda).abs() <= PCA_TOLERANCE * rq.abs().max(1e-300);
            lambda = rq;
            if converged {
                break;
            }
        }
        // Rayleigh quotient of the final iterate.
        mat_vec(&cov, &v, &mut w);
        variances.push(dot(&v, &w).max(0.0));
        basis.push(v.clone());
    }

    // Power iteration on close eigenvalues can return them slightly out of order.
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]));
    let mut components = Matrix::zeros(c, m);
    let mut explained_variance = Vec::with_capacity(c);
    for (r, &k) in order.iter().enumerate() {
        components.row_mut(r).copy_from_slice(&basis[k]);
        explained_variance.push(variances[k]);
    }
    let model = PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
    };

    let mut scores = Matrix::zeros(n, c);
    for (r, &i) in ids.iter().enumerate() {
        model.transform_into(store.row(i), scores.row_mut(r));
    }
    let reduced = DatasetStore::from_matrix(&scores, super::Metric::Euclidean)?;
    Ok((model, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::Metric;
    use crate::matrix::sq_euclidean;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, m: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        let data = (0..n * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, m, data)
    }

    fn store(m: &Matrix) -> DatasetStore {
        DatasetStore::from_matrix(m, Metric::Euclidean).unwrap()
    }

    #[test]
    fn rank_one_line() {
        let rows: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64, k as f64]).collect();
        let (model, reduced) = pca_reduce(&store(&Matrix::from_rows(&rows)), 1).unwrap();
        assert!((model.explained_ratio() - 1.0).abs() < 1e-6);
        assert_eq!(reduced.dim(), 1);
    }

    #[test]
    fn full_rank_preserves_distances() {
        let m = gaussian(30, 5, 3);
        let s = store(&m);
        let (_, reduced) = pca_reduce(&s, 5).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let a = sq_euclidean(m.row(i), m.row(j)).sqrt();
                let b = reduced.dist2(i, j).sqrt();
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn components_orthonormal_and_sorted() {
        let s = store(&gaussian(80, 12, 9));
        let (model, _) = pca_reduce(&s, 6).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let d = dot(model.components.row(a), model.components.row(b));
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-6);
            }
        }
        assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn matches_dense_eigensolver() {
        let m = gaussian(100, 10, 42);
        let s = store(&m);
        let (model, _) = pca_reduce(&s, 3).unwrap();

        // Independent oracle: nalgebra's symmetric eigendecomposition.
        let n = m.rows() as f64;
        let mut mean = [0.0; 10];
        for r in m.iter_rows() {
            for k in 0..10 {
                mean[k] += r[k] / n;
            }
        }
        let mut cov = nalgebra::DMatrix::<f64>::zeros(10, 10);
        for r in m.iter_rows() {
            for a in 0..10 {
                for b in 0..10 {
                    cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (k, want) in eig.iter().take(3).enumerate() {
            assert!(
                (model.explained_variance[k] - want).abs() < 1e-4,
                "component {k}: {} vs {want}",
                model.explained_variance[k]
            );
        }
    }

    #[test]
    fn reconstruction_error_non_increasing() {
        let m = gaussian(60, 8, 5);
        let s = store(&m);
        let mut last = f64::INFINITY;
        for c in 1..=8 {
            let (model, reduced) = pca_reduce(&s, c).unwrap();
            let mut err = 0.0;
            for i in 0..60 {
                let scores = reduced.row(i);
                let mut recon = model.mean.clone();
                for (k, sc) in scores.iter().enumerate() {
                    for (r, w) in recon.iter_mut().zip(model.components.row(k)) {
                        *r += sc * w;
                    }
                }
                err += sq_euclidean(&recon, m.row(i));
            }
            assert!(err <= last + 1e-9);
            last = err;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn rotation_invariant_distances() {
        let m = gaussian(40, 4, 11);
        // Random rotation from the QR of a Gaussian matrix.
        let g = gaussian(4, 4, 12);
        let q = nalgebra::DMatrix::from_row_slice(4, 4, g.as_slice()).qr().q();
        let mut rotated = Matrix::zeros(40, 4);
        for i in 0..40 {
            for a in 0..4 {
                rotated[(i, a)] = (0..4).map(|b| q[(a, b)] * m[(i, b)]).sum();
            }
        }
        let (_, r1) = pca_reduce(&store(&m), 4).unwrap();
        let (_, r2) = pca_reduce(&store(&rotated), 4).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert!((r1.dist2(i, j).sqrt() - r2.dist2(i, j).sqrt()).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn bad_component_count_and_constant_data() {
        let s = store(&gaussian(5, 3, 1));
        assert!(pca_reduce(&s, 0).is_err());
        assert!(pca_reduce(&s, 4).is_err());
        let flat = store(&Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]));
        assert!(matches!(pca_reduce(&flat, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rank_deficient_gets_null_components() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 2.0 * k as f64, 0.0]).collect();
        let (model, _) = pca_reduce(&store(&Matrix::from_rows(&rows)), 3).unwrap();
        assert!(model.explained_variance[1].abs() < 1e-9);
        for a in 0..3 {
            assert!((dot(model.components.row(a), model.components.row(a)) - 1.0).abs() < 1e-9);
        }
    }
}
