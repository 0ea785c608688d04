use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataspace::{pca_reduce, DatasetStore, PcaModel};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    #[default]
    Pca,
    Random,
}

/// Linear map from HD rows to `d` LD coordinates, rescaled so that the
/// projected data has unit standard deviation along its first axis.
#[derive(Debug, Clone)]
pub struct Projection {
    model: PcaModel,
    scale: f64,
}

impl Projection {
    pub fn fit(store: &DatasetStore, dim: usize, kind: ProjectionKind, seed: u64) -> Result<Self> {
        let m = store.dim();
        if dim > m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: dim,
            });
        }
        let model = match kind {
            ProjectionKind::Pca => pca_reduce(store, dim)?.0,
            ProjectionKind::Random => {
                let mut rng = stream_rng(seed, Stream::Init, 99, 0);
                let mut comps = Matrix::zeros(dim, m);
                for r in 0..dim {
                    let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                    for _ in 0..2 {
                        for q in 0..r {
                            let c = dot(&v, comps.row(q));
                            for (x, y) in v.iter_mut().zip(comps.row(q)) {
                                *x -= c * y;
                            }
                        }
                    }
                    let n = dot(&v, &v).sqrt();
                    if n == 0.0 {
                        return Err(Error::Degenerate("random projection collapsed".into()));
                    }
                    comps
                        .row_mut(r)
                        .copy_from_slice(&v.iter().map(|x| x / n).collect::<Vec<_>>());
                }
                let live = store.sorted_live_indices();
                let mut mean = vec![0.0; m];
                for &i in &live {
                    for (a, b) in mean.iter_mut().zip(store.row(i)) {
                        *a += b;
                    }
                }
                mean.iter_mut().for_each(|a| *a /= live.len() as f64);
                PcaModel {
                    mean,
                    components: comps,
                    explained_variance: vec![0.0; dim],
                    total_variance: 0.0,
                }
            }
        };
        let live = store.sorted_live_indices();
        let first: Vec<f64> = live.iter().map(|&i| model.transform(store.row(i))[0]).collect();
        let mean = first.iter().sum::<f64>() / first.len() as f64;
        let var = first.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / first.len() as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        Ok(Self { model, scale })
    }

    pub fn dim(&self) -> usize {
        self.model.n_components()
    }

    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        self.model.transform_into(x, out);
        out.iter_mut().for_each(|v| *v *= self.scale);
    }
}
