//! Neighbourhood preservation (Q_NX / R_NX), recall and 1-NN accuracy.

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::matrix::{sq_euclidean, Matrix};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnxCurve {
    pub k_max: usize,
    /// `qnx[k - 1]` is Q_NX(k).
    pub qnx: Vec<f64>,
    /// `rnx[k - 1]` is R_NX(k).
    pub rnx: Vec<f64>,
    /// 1/K-weighted mean of R_NX.
    pub auc: f64,
}

impl RnxCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,qnx,rnx\n");
        for k in 0..self.k_max {
            s.push_str(&format!("{},{},{}\n", k + 1, self.qnx[k], self.rnx[k]));
        }
        s
    }
}

fn shared_rows(reference: &NeighborTable, compared: &NeighborTable, k_max: usize) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..reference.n_slots()).filter(|&i| reference.is_active(i)).collect();
    let n = rows.len();
    if k_max == 0 || k_max + 1 >= n {
        return Err(Error::param(
            "k_max",
            format!("{k_max} must lie in 1..{}", n.saturating_sub(1)),
        ));
    }
    let cap = reference.k().min(compared.k());
    if k_max > cap {
        return Err(Error::CapacityBound { k: k_max, n: cap });
    }
    if let Some(&i) = rows
        .iter()
        .find(|&&i| i >= compared.n_slots() || !compared.is_active(i))
    {
        return Err(Error::Invalid(format!("point {i} missing from the compared table")));
    }
    Ok(rows)
}

/// For each point, the number of shared neighbours within the first `k`
/// entries, for every `k` in `1..=k_max`.
fn overlap_counts(reference: &NeighborTable, compared: &NeighborTable, i: usize, k_max: usize, out: &mut [u32]) {
    // A shared neighbour counts from K = max(rank_ref, rank_cmp) onwards.
    let r = &reference.neighbors(i)[..k_max];
    let c = &compared.neighbors(i)[..k_max];
    let mut cmp: Vec<(u32, usize)> = c.iter().enumerate().map(|(p, &j)| (j, p)).collect();
    cmp.sort_unstable();
    out.fill(0);
    for (pr, j) in r.iter().enumerate() {
        if let Ok(pos) = cmp.binary_search_by_key(j, |e| e.0) {
            out[pr.max(cmp[pos].1)] += 1;
        }
    }
    for k in 1..k_max {
        out[k] += out[k - 1];
    }
}

/// Per-point Q_NX(k): the fraction of the first `k` reference neighbours
/// also among the first `k` compared neighbours. Indexed by active row order.
pub fn qnx_per_point(reference: &NeighborTable, compared: &NeighborTable, k: usize) -> Result<Vec<f64>> {
    let rows = shared_rows(reference, compared, k)?;
    Ok(rows
        .par_iter()
        .map_init(
            || vec![0u32; k],
            |buf, &i| {
                overlap_counts(reference, compared, i, k, buf);
                buf[k - 1] as f64 / k as f64
            },
        )
        .collect())
}

pub fn rnx_curve(reference: &NeighborTable, compared: &NeighborTable, k_max: usize) -> Result<RnxCurve> {
    let rows = shared_rows(reference, compared, k_max)?;
    let n = rows.len();
    let totals = rows
        .par_iter()
        .fold(
            || (vec![0u32; k_max], vec![0u64; k_max]),
            |(mut buf, mut acc), &i| {
                overlap_counts(reference, compared, i, k_max, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += *b as u64;
                }
                (buf, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(
            || vec![0u64; k_max],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut qnx = Vec::with_capacity(k_max);
    let mut rnx = Vec::with_capacity(k_max);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..=k_max {
        let q = totals[k - 1] as f64 / (n * k) as f64;
        let r = ((n - 1) as f64 * q - k as f64) / (n - 1 - k) as f64;
        qnx.push(q);
        rnx.push(r);
        num += r / k as f64;
        den += 1.0 / k as f64;
    }
    Ok(RnxCurve {
        k_max,
        qnx,
        rnx,
        auc: num / den,
    })
}

/// R_NX of an embedding against exact HD neighbours, both computed by
/// exhaustive scans of dense matrices with matching rows.
pub fn rnx_of_embedding(hd: &Matrix, ld: &Matrix, k_max: usize) -> Result<RnxCurve> {
    if hd.rows() != ld.rows() {
        return Err(Error::DimensionMismatch {
            expected: hd.rows(),
            found: ld.rows(),
        });
    }
    if k_max + 1 >= hd.rows() {
        return Err(Error::param(
            "k_max",
            format!("{k_max} must be below N - 1 = {}", hd.rows() - 1),
        ));
    }
    let reference = crate::knn::exact_knn_matrix(hd, k_max)?;
    let compared = crate::knn::exact_knn_matrix(ld, k_max)?;
    rnx_curve(&reference, &compared, k_max)
}

/// Mean fraction of the first `k` reference neighbours found in the first
/// `k` compared neighbours.
pub fn recall_at_k(reference: &NeighborTable, compared: &NeighborTable, k: usize) -> Result<f64> {
    if k == 0 || k > reference.k() || k > compared.k() {
        return Err(Error::param("k", format!("{k} out of range")));
    }
    Ok(crate::knn::recall(reference, compared, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// One random labelled exemplar per class, repeated `trials` times.
    OneShot { trials: usize },
    /// Stratified cross-validation.
    KFold { folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std: f64,
    /// Per trial (one-shot) or per fold (k-fold) test accuracy.
    pub runs: Vec<f64>,
    /// Leave-one-out accuracy inside the training folds (k-fold only).
    pub train_mean: Option<f64>,
}

/// Index (into `candidates`) of the candidate nearest to `query`; ties go
/// to the earlier candidate.
pub fn nearest_among(features: &Matrix, candidates: &[usize], query: usize) -> usize {
    let q = features.row(query);
    let mut best = (f64::INFINITY, 0);
    for (p, &c) in candidates.iter().enumerate() {
        let d = sq_euclidean(q, features.row(c));
        if d < best.0 {
            best = (d, p);
        }
    }
    best.1
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn classes(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|m| !m.is_empty());
    members
}

/// One-shot exemplars drawn for trial `t`: one random member of each class.
pub fn one_shot_exemplars(labels: &[usize], seed: u64, trial: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::Metrics, trial as u64, 0);
    classes(labels).iter().map(|m| *m.choose(&mut rng).unwrap()).collect()
}

pub fn one_nn_accuracy(features: &Matrix, labels: &[usize], mode: EvalMode, seed: u64) -> Result<AccuracyStats> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: labels.len(),
        });
    }
    let members = classes(labels);
    if members.len() < 2 {
        return Err(Error::Invalid("need at least two classes".into()));
    }
    match mode {
        EvalMode::OneShot { trials } => {
            if trials == 0 {
                return Err(Error::param("trials", "must be at least 1"));
            }
            let runs: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let ex = one_shot_exemplars(labels, seed, t);
                    let mut correct = 0usize;
                    let mut total = 0usize;
                    for q in 0..features.rows() {
                        if ex.contains(&q) {
                            continue;
                        }
                        total += 1;
                        correct += (labels[ex[nearest_among(features, &ex, q)]] == labels[q]) as usize;
                    }
                    correct as f64 / total.max(1) as f64
                })
                .collect();
            let (mean, std) = mean_std(&runs);
            Ok(AccuracyStats {
                mean,
                std,
                runs,
                train_mean: None,
            })
        }
        EvalMode::KFold { folds } => {
            if folds < 2 {
                return Err(Error::param("folds", "must be at least 2"));
            }
            if let Some(m) = members.iter().find(|m| m.len() < folds) {
                return Err(Error::param(
                    "folds",
                    format!("{folds} exceeds the size {} of class {}", m.len(), labels[m[0]]),
                ));
            }
            let mut rng = stream_rng(seed, Stream::Metrics, u64::MAX, 0);
            let mut fold_of = vec![0usize; labels.len()];
            for m in &members {
                let mut m = m.clone();
                m.shuffle(&mut rng);
                for (p, &i) in m.iter().enumerate() {
                    fold_of[i] = p % folds;
                }
            }
            let per_fold: Vec<(f64, f64)> = (0..folds)
                .into_par_iter()
                .map(|f| {
                    let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
                    let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
                    let test_ok = test
                        .iter()
                        .filter(|&&q| labels[train[nearest_among(features, &train, q)]] == labels[q])
                        .count();
                    let mut others = Vec::with_capacity(train.len());
                    let train_ok = train
                        .iter()
                        .filter(|&&q| {
                            others.clear();
                            others.extend(train.iter().copied().filter(|&j| j != q));
                            labels[others[nearest_among(features, &others, q)]] == labels[q]
                        })
                        .count();
                    (test_ok as f64 / test.len() as f64, train_ok as f64 / train.len() as f64)
                })
                .collect();
            let runs: Vec<f64> = per_fold.iter().map(|r| r.0).collect();
            let train: Vec<f64> = per_fold.iter().map(|r| r.1).collect();
            let (mean, std) = mean_std(&runs);
            Ok(AccuracyStats {
                mean,
                std,
                runs,
                train_mean: Some(mean_std(&train).0),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{exact_knn_matrix, init_table, Space};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    /// Direct recount of the set intersections for every K.
    fn brute_rnx(reference: &NeighborTable, compared: &NeighborTable, n: usize, k_max: usize) -> Vec<f64> {
        (1..=k_max)
            .map(|k| {
                let mut hits = 0usize;
                for i in 0..n {
                    for a in &reference.neighbors(i)[..k] {
                        for b in &compared.neighbors(i)[..k] {
                            hits += (a == b) as usize;
                        }
                    }
                }
                let q = hits as f64 / (n * k) as f64;
                ((n - 1) as f64 * q - k as f64) / (n - 1 - k) as f64
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_twenty_points() {
        let hd = exact_knn_matrix(&gaussian(20, 5, 1), 15).unwrap();
        let ld = exact_knn_matrix(&gaussian(20, 2, 2), 15).unwrap();
        let c = rnx_curve(&hd, &ld, 15).unwrap();
        let b = brute_rnx(&hd, &ld, 20, 15);
        for (x, y) in c.rnx.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_errors() {
        let t = exact_knn_matrix(&gaussian(30, 3, 3), 10).unwrap();
        let c = rnx_curve(&t, &t, 10).unwrap();
        assert!(c.rnx.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        assert_eq!(c.auc, 1.0);
        assert!(rnx_curve(&t, &t, 11).is_err());
        assert!(rnx_curve(&t, &t, 0).is_err());
        let full = exact_knn_matrix(&gaussian(12, 3, 3), 11).unwrap();
        assert!(rnx_curve(&full, &full, 11).is_err());
    }

    #[test]
    fn random_tables_are_at_chance() {
        let live: Vec<usize> = (0..2000).collect();
        let reference = exact_knn_matrix(&gaussian(2000, 4, 5), 10).unwrap();
        let mut total = 0.0;
        for s in 0..20 {
            let t = init_table(2000, &live, 10, s, Space::Ld, &|_, _| 0.0).unwrap();
            let c = rnx_curve(&reference, &t, 10).unwrap();
            total += c.rnx.iter().sum::<f64>() / 10.0;
        }
        assert!((total / 20.0).abs() < 0.02);
    }

    #[test]
    fn recall_cases() {
        let mut a = NeighborTable::new(2, 4);
        let mut b = NeighborTable::new(2, 4);
        let mut c = NeighborTable::new(2, 4);
        a.set_row(0, &mut [(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]);
        b.set_row(0, &mut [(1, 1.0), (2, 2.0), (5, 3.0), (6, 4.0)]);
        c.set_row(0, &mut [(7, 1.0), (8, 2.0), (5, 3.0), (6, 4.0)]);
        assert_eq!(recall_at_k(&a, &a, 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&a, &b, 4).unwrap(), 0.5);
        assert_eq!(recall_at_k(&a, &c, 4).unwrap(), 0.0);
        assert!(recall_at_k(&a, &b, 5).is_err());
    }

    #[test]
    fn improving_a_row_never_lowers_auc() {
        let hd = exact_knn_matrix(&gaussian(60, 5, 7), 20).unwrap();
        let mut ld = exact_knn_matrix(&gaussian(60, 2, 8), 20).unwrap();
        let mut auc = rnx_curve(&hd, &ld, 20).unwrap().auc;
        for i in 0..60 {
            let mut row: Vec<(u32, f64)> = hd.entries(i).map(|(j, d)| (j as u32, d)).collect();
            ld.set_row(i, &mut row);
            let next = rnx_curve(&hd, &ld, 20).unwrap().auc;
            assert!(next >= auc - 1e-12);
            auc = next;
        }
        assert!((auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separable_one_shot_is_perfect() {
        let mut rng = seeded(9);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..50 {
                rows.push(vec![10.0 * c as f64 + 0.01 * rng.random::<f64>(), 10.0 * c as f64]);
                labels.push(c);
            }
        }
        let m = Matrix::from_rows(&rows);
        let s = one_nn_accuracy(&m, &labels, EvalMode::OneShot { trials: 10 }, 0).unwrap();
        assert_eq!(s.mean, 1.0);
        let k = one_nn_accuracy(&m, &labels, EvalMode::KFold { folds: 5 }, 0).unwrap();
        assert_eq!(k.mean, 1.0);
        assert_eq!(k.train_mean, Some(1.0));
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let m = gaussian(400, 3, 10);
        let mut labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        labels.shuffle(&mut seeded(11));
        let s = one_nn_accuracy(&m, &labels, EvalMode::OneShot { trials: 100 }, 1).unwrap();
        assert!((s.mean - 0.25).abs() < 0.05, "{}", s.mean);
    }

    #[test]
    fn one_shot_matches_exhaustive_oracle() {
        let mut rng = seeded(12);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            rows.push(vec![
                2.0 * c as f64 + rng.random::<f64>(),
                rng.random::<f64>() - c as f64,
            ]);
            labels.push(c);
        }
        let m = Matrix::from_rows(&rows);
        for t in 0..5 {
            let ex = one_shot_exemplars(&labels, 3, t);
            for q in 0..200 {
                let mut best = (f64::INFINITY, usize::MAX);
                for &e in &ex {
                    let d: f64 = (0..2).map(|c| (m[(q, c)] - m[(e, c)]).powi(2)).sum();
                    if d < best.0 {
                        best = (d, e);
                    }
                }
                assert_eq!(ex[nearest_among(&m, &ex, q)], best.1);
            }
        }
    }

    #[test]
    fn evaluator_errors() {
        let m = gaussian(10, 2, 1);
        assert!(one_nn_accuracy(&m, &[0; 10], EvalMode::OneShot { trials: 1 }, 0).is_err());
        let labels: Vec<usize> = (0..10).map(|i| (i < 3) as usize).collect();
        assert!(one_nn_accuracy(&m, &labels, EvalMode::KFold { folds: 4 }, 0).is_err());
        assert!(one_nn_accuracy(&m, &labels[..9], EvalMode::KFold { folds: 2 }, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rnx_invariant_under_relabelling(seed in 0u64..1000) {
            let n = 25;
            let hd_m = gaussian(n, 4, seed);
            let ld_m = gaussian(n, 2, seed + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seeded(seed + 2));
            let a = rnx_curve(&exact_knn_matrix(&hd_m, 8).unwrap(), &exact_knn_matrix(&ld_m, 8).unwrap(), 8).unwrap();
            let b = rnx_curve(
                &exact_knn_matrix(&hd_m.select_rows(&perm), 8).unwrap(),
                &exact_knn_matrix(&ld_m.select_rows(&perm), 8).unwrap(),
                8,
            ).unwrap();
            for (x, y) in a.rnx.iter().zip(&b.rnx) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
