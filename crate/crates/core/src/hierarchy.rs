//! Cluster graphs across embeddings captured at decreasing α.
//!
//! Each snapshot is clustered with DBSCAN. Clusters become nodes, and
//! clusters on adjacent levels are joined by an edge weighted by their
//! overlap relative to the smaller of the two.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::exact_knn_matrix;
use crate::matrix::{sq_euclidean, Matrix};
use crate::session::{Session, Snapshot};

pub const NOISE: i64 = -1;
pub const DEFAULT_MIN_PTS: usize = 5;
pub const DEFAULT_SETTLE_ITERS: usize = 1500;
pub const DEFAULT_DIM: usize = 6;
/// Multiplier on the median 4th-neighbour distance when eps is automatic.
pub const DEFAULT_EPS_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::param("eps", format!("{} must be positive", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::param("min_pts", "must be at least 1"));
        }
        Ok(())
    }
}

/// Median distance to the 4th nearest neighbour.
pub fn default_eps(coords: &Matrix) -> Result<f64> {
    let n = coords.rows();
    if n < 6 {
        return Err(Error::CapacityBound { k: 4, n });
    }
    let table = exact_knn_matrix(coords, 4)?;
    let mut fourth: Vec<f64> = (0..n).map(|i| table.distances(i)[3].sqrt()).collect();
    fourth.sort_by(f64::total_cmp);
    let eps = fourth[n / 2];
    Ok(if eps > 0.0 { eps } else { f64::MIN_POSITIVE })
}

/// Cluster labels (`NOISE` for noise), numbered in order of discovery when
/// scanning core points by ascending index.
pub fn dbscan(coords: &Matrix, params: DbscanParams) -> Result<Vec<i64>> {
    params.validate()?;
    let n = coords.rows();
    let eps2 = params.eps * params.eps;
    let regions: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = coords.row(i);
            (0..n).filter(|&j| sq_euclidean(yi, coords.row(j)) <= eps2).collect()
        })
        .collect();
    let core: Vec<bool> = regions.iter().map(|r| r.len() >= params.min_pts).collect();

    // Core points are flooded in ascending index order. Border points are
    // then given the cluster of their nearest core point, which keeps the
    // partition independent of the input order.
    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if labels[seed] != NOISE || !core[seed] {
            continue;
        }
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &regions[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let yi = coords.row(i);
        let nearest = regions[i]
            .iter()
            .filter(|&&j| core[j])
            .map(|&j| (sq_euclidean(yi, coords.row(j)), labels[j]))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, l)) = nearest {
            labels[i] = l;
        }
    }
    Ok(labels)
}

/// Point sets per cluster id, each sorted ascending. `ids` maps row positions
/// to point indices.
pub fn clusters_from_labels(labels: &[i64], ids: &[usize]) -> Vec<Vec<usize>> {
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut out = vec![Vec::new(); n_clusters];
    for (pos, &l) in labels.iter().enumerate() {
        if l >= 0 {
            out[l as usize].push(ids[pos]);
        }
    }
    out.iter_mut().for_each(|c| c.sort_unstable());
    out
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Overlap weight between a cluster on level `level_a` and one on
/// `level_b`. Sets must be sorted ascending. Only adjacent levels interact.
pub fn edge_weight(a: &[usize], level_a: usize, b: &[usize], level_b: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("edge weight of an empty cluster".into()));
    }
    if level_a.abs_diff(level_b) != 1 {
        return Ok(0.0);
    }
    Ok(intersection_size(a, b) as f64 / a.len().min(b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: usize,
    pub level: usize,
    pub members: Vec<usize>,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEdge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub levels: Vec<f64>,
    pub nodes: Vec<ClusterNode>,
    pub edges: Vec<ClusterEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl GraphFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("dot") | Some("gv") => GraphFormat::Dot,
            _ => GraphFormat::Json,
        }
    }
}

impl ClusterGraph {
    /// Builds nodes and all positive adjacent-level edges. `clusters[l]`
    /// lists the (sorted) member sets found at level `l`.
    pub fn from_levels(levels: Vec<f64>, clusters: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if levels.len() != clusters.len() {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                found: clusters.len(),
            });
        }
        let mut nodes = Vec::new();
        for (level, sets) in clusters.into_iter().enumerate() {
            for members in sets.into_iter().filter(|m| !m.is_empty()) {
                nodes.push(ClusterNode {
                    id: nodes.len(),
                    level,
                    size: members.len(),
                    members,
                    prototype: None,
                });
            }
        }
        let mut edges = Vec::new();
        for a in &nodes {
            for b in nodes.iter().filter(|b| b.level == a.level + 1) {
                let w = edge_weight(&a.members, a.level, &b.members, b.level)?;
                if w > 0.0 {
                    edges.push(ClusterEdge { a: a.id, b: b.id, w });
                }
            }
        }
        Ok(Self { levels, nodes, edges })
    }

    pub fn nodes_at(&self, level: usize) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    /// Attaches the mean HD row of each cluster.
    pub fn attach_prototypes(&mut self, row: impl Fn(usize) -> Vec<f64>) {
        for node in &mut self.nodes {
            let mut mean: Vec<f64> = Vec::new();
            for &i in &node.members {
                let r = row(i);
                if mean.is_empty() {
                    mean = vec![0.0; r.len()];
                }
                mean.iter_mut().zip(&r).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= node.members.len() as f64);
            node.prototype = Some(mean);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("bad graph json: {e}")))
    }

    /// Graphviz rendering; node width grows with the square root of the
    /// cluster size, within `[DOT_MIN_WIDTH, DOT_MAX_WIDTH]`.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph hierarchy {\n  node [shape=circle, fixedsize=true, label=\"\"];\n");
        for n in &self.nodes {
            let alpha = self.levels.get(n.level).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "  n{} [width={:.4}, level={}, alpha={}, size={}];",
                n.id,
                dot_width(n.size),
                n.level,
                alpha,
                n.size
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  n{} -- n{} [weight={:.6}, penwidth={:.3}];",
                e.a,
                e.b,
                e.w,
                0.5 + 3.0 * e.w
            );
        }
        s.push_str("}\n");
        s
    }

    pub fn export(&self, path: impl AsRef<Path>, format: GraphFormat) -> Result<()> {
        let path = path.as_ref();
        let text = match format {
            GraphFormat::Json => self.to_json(),
            GraphFormat::Dot => self.to_dot(),
        };
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub const DOT_MIN_WIDTH: f64 = 0.1;
pub const DOT_MAX_WIDTH: f64 = 5.0;

pub fn dot_width(size: usize) -> f64 {
    ((size as f64).sqrt() / 10.0).clamp(DOT_MIN_WIDTH, DOT_MAX_WIDTH)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyParams {
    pub settle_iters: usize,
    /// Fixed DBSCAN parameters; `None` picks eps per snapshot.
    pub dbscan: Option<DbscanParams>,
    pub eps_factor: f64,
    pub min_pts: usize,
    pub prototypes: bool,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        Self {
            settle_iters: DEFAULT_SETTLE_ITERS,
            dbscan: None,
            eps_factor: DEFAULT_EPS_FACTOR,
            min_pts: DEFAULT_MIN_PTS,
            prototypes: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HierarchyRun {
    pub graph: ClusterGraph,
    pub snapshots: Vec<Snapshot>,
    pub labels: Vec<Vec<i64>>,
}

/// Walks the session through `alphas` (strictly descending), settling and
/// clustering at each one.
pub fn build_hierarchy(session: &mut Session, alphas: &[f64], params: &HierarchyParams) -> Result<HierarchyRun> {
    if alphas.is_empty() {
        return Err(Error::param("alphas", "empty"));
    }
    if alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("alphas", "must be strictly descending"));
    }
    if !(params.eps_factor.is_finite() && params.eps_factor > 0.0) {
        return Err(Error::param("eps_factor", "must be positive"));
    }
    if let Some(p) = &params.dbscan {
        p.validate()?;
    }
    let mut snapshots = Vec::with_capacity(alphas.len());
    let mut labels = Vec::with_capacity(alphas.len());
    let mut clusters = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        session.set_param("alpha", alpha)?;
        for _ in 0..params.settle_iters {
            session.step()?;
        }
        let snap = session.take_snapshot();
        let db = match params.dbscan {
            Some(p) => p,
            None => DbscanParams {
                eps: default_eps(&snap.coords)? * params.eps_factor,
                min_pts: params.min_pts,
            },
        };
        let lab = dbscan(&snap.coords, db)?;
        log::info!(
            "alpha {alpha}: {} clusters, eps {:.4}",
            lab.iter().max().map_or(0, |m| m + 1),
            db.eps
        );
        clusters.push(clusters_from_labels(&lab, &snap.ids));
        labels.push(lab);
        snapshots.push(snap);
    }
    let mut graph = ClusterGraph::from_levels(alphas.to_vec(), clusters)?;
    if params.prototypes {
        let store = session.store();
        graph.attach_prototypes(|i| store.row(i).to_vec());
    }
    Ok(HierarchyRun {
        graph,
        snapshots,
        labels,
    })
}
