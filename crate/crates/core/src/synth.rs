//! Synthetic datasets with known structure.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::matrix::{dot, Matrix};
use crate::rng::seeded;

/// Labelled synthetic data.
#[derive(Debug, Clone)]
pub struct Labelled {
    pub data: Matrix,
    pub labels: Vec<usize>,
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect()
}

/// `n_centres` isotropic clusters of `per_centre` points. Centres are drawn
/// from N(0, spread^2 I), members from N(centre, sigma^2 I). Rows are grouped by
/// cluster.
pub fn gaussian_blobs(n_centres: usize, per_centre: usize, dim: usize, spread: f64, sigma: f64, seed: u64) -> Labelled {
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n_centres * per_centre * dim);
    let mut labels = Vec::with_capacity(n_centres * per_centre);
    for c in 0..n_centres {
        let centre = gaussian_vec(&mut rng, dim, spread);
        for _ in 0..per_centre {
            for &m in &centre {
                let g: f64 = StandardNormal.sample(&mut rng);
                data.push(m + sigma * g);
            }
            labels.push(c);
        }
    }
    Labelled {
        data: Matrix::from_vec(n_centres * per_centre, dim, data),
        labels,
    }
}

/// Many far-apart, very tight clusters: 200 centres x 30 points in 30-D.
pub fn disjointed_blobs(seed: u64) -> Labelled {
    gaussian_blobs(200, 30, 30, 10.0, 0.01, seed)
}

/// One noisy circle per object, each in its own random 2-plane of a
/// `dim`-dimensional space, mimicking rotation sequences of images.
pub fn coil_like_rings(n_objects: usize, per_ring: usize, dim: usize, seed: u64) -> Labelled {
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut data = Vec::with_capacity(n_objects * per_ring * dim);
    let mut labels = Vec::new();
    for o in 0..n_objects {
        let centre = gaussian_vec(&mut rng, dim, 2.0);
        let u = {
            let v = gaussian_vec(&mut rng, dim, 1.0);
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let w = {
            let mut v = gaussian_vec(&mut rng, dim, 1.0);
            let c = dot(&v, &u);
            v.iter_mut().zip(&u).for_each(|(a, b)| *a -= c * b);
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let radius = 1.0 + rng.random::<f64>();
        for s in 0..per_ring {
            let t = std::f64::consts::TAU * s as f64 / per_ring as f64;
            let (a, b) = (radius * t.cos(), radius * t.sin());
            for k in 0..dim {
                data.push(centre[k] + a * u[k] + b * w[k] + noise.sample(&mut rng));
            }
            labels.push(o);
        }
    }
    Labelled {
        data: Matrix::from_vec(n_objects * per_ring, dim, data),
        labels,
    }
}

/// Two-level structure: `top` well separated groups, each made of `sub`
/// tighter sub-clusters. Labels are `top_label * sub + sub_label`.
pub fn nested_blobs(top: usize, sub: usize, per_sub: usize, dim: usize, seed: u64) -> Labelled {
    let mut rng = seeded(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for t in 0..top {
        let outer = gaussian_vec(&mut rng, dim, 40.0);
        for s in 0..sub {
            let inner: Vec<f64> = gaussian_vec(&mut rng, dim, 4.0)
                .iter()
                .zip(&outer)
                .map(|(a, b)| a + b)
                .collect();
            for _ in 0..per_sub {
                for &m in &inner {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + 0.5 * g);
                }
                labels.push(t * sub + s);
            }
        }
    }
    Labelled {
        data: Matrix::from_vec(labels.len(), dim, data),
        labels,
    }
}
