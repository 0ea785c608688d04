use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use tailne::dataspace::{load_dataset, load_matrix, save_matrix, write_csv, DatasetStore, Format, Metric};
use tailne::hierarchy::{build_hierarchy, DbscanParams, GraphFormat, HierarchyParams};
use tailne::knn::{exact_knn, init_table, nnd_with_trace, recall, NeighborTable, Space};
use tailne::metrics::{one_nn_accuracy, rnx_of_embedding, AccuracyStats, EvalMode};
use tailne::session::{Session, SessionConfig};
use tailne::{Error, Matrix};

use crate::args::{Baseline, EmbedArgs, HierarchyArgs, InputArgs, KnnBenchArgs, MetricsArgs, ServeArgs, SessionArgs};
use crate::{Progress, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, flag: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} is not a readable file", path.display())))
    }
}

fn require_dir(path: &Path, flag: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: {} is not a directory", path.display())))
    }
}

fn require_writable(path: &Path, flag: &str) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => require_dir(dir, flag),
        _ => Ok(()),
    }
}

/// Configuration errors count as flag errors.
fn config_error(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidParam { .. } | Error::CapacityBound { .. } | Error::UnknownParam(_) => usage(e.to_string()),
        e => e.into(),
    }
}

fn load(input: &InputArgs, metric: Metric) -> Result<DatasetStore> {
    let format = input.format.unwrap_or_else(|| Format::from_path(&input.input));
    load_dataset(&input.input, format, metric).with_context(|| format!("loading {}", input.input.display()))
}

fn session_config(a: &SessionArgs) -> SessionConfig {
    let mut c = SessionConfig {
        dim: a.dim,
        perplexity: a.perplexity,
        k_hd: a.k_hd,
        k_ld: a.k_ld,
        seed: a.seed,
        learning_rate: a.lr,
        jumpstart_iters: a.jumpstart,
        ..Default::default()
    };
    c.kernel.alpha = a.alpha;
    c.kernel.attraction_scale = a.attract;
    c.kernel.repulsion_scale = a.repulse;
    c
}

fn write_coords(coords: &Matrix, path: &Path) -> Result<()> {
    match Format::from_path(path) {
        Format::Fbin => save_matrix(coords, path),
        Format::Csv => write_csv(coords, path),
    }
    .with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn embed(a: EmbedArgs, progress: Progress) -> Result<()> {
    require_file(&a.input.input, "--input")?;
    require_writable(&a.out, "--out")?;
    if let Some(r) = &a.report {
        require_writable(r, "--report")?;
    }
    let store = load(&a.input, a.session.metric)?;
    let config = session_config(&a.session);
    config.validate(store.n_live()).map_err(config_error)?;
    let mut session = Session::new(store, config)?;

    let start = Instant::now();
    let mut fraction_new = session.stats().fraction_new;
    for it in 1..=a.iters {
        let report = session.step()?;
        fraction_new = report.fraction_new;
        if a.progress_every > 0 && (it % a.progress_every == 0 || it == a.iters) {
            progress.emit(
                "progress",
                json!({
                    "iteration": it,
                    "fraction_new": report.fraction_new,
                    "hd_passes": session.hd_passes(),
                    "elapsed": start.elapsed().as_secs_f64(),
                }),
            );
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let (coords, _) = session.live_coords();
    write_coords(&coords, &a.out)?;

    let report = json!({
        "n": coords.rows(),
        "dim": coords.cols(),
        "iterations": a.iters,
        "fraction_new": fraction_new,
        "hd_passes": session.hd_passes(),
        "learning_rate": session.learning_rate(),
        "wall_seconds": wall,
        "iterations_per_sec": if wall > 0.0 { a.iters as f64 / wall } else { 0.0 },
        "output": a.out.display().to_string(),
    });
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&report)
}

/// One label per line, any text; an optional non-numeric header is skipped
/// when every later line is numeric.
fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines: Vec<&str> = text
        .lines()
        .map(|l| l.split(',').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() > 1 && lines[0].parse::<f64>().is_err() && lines[1..].iter().all(|l| l.parse::<f64>().is_ok()) {
        lines.remove(0);
    }
    let mut names: Vec<&str> = Vec::new();
    Ok(lines
        .into_iter()
        .map(|l| match names.iter().position(|&n| n == l) {
            Some(i) => i,
            None => {
                names.push(l);
                names.len() - 1
            }
        })
        .collect())
}

fn accuracy_json(features: &Matrix, labels: &[usize], a: &MetricsArgs) -> Result<Value> {
    let one_shot = one_nn_accuracy(features, labels, EvalMode::OneShot { trials: a.trials }, a.seed)?;
    let kfold = one_nn_accuracy(features, labels, EvalMode::KFold { folds: a.folds }, a.seed)?;
    let summary =
        |s: &AccuracyStats| json!({ "mean": s.mean, "std": s.std, "runs": s.runs, "train_mean": s.train_mean });
    Ok(json!({ "one_shot": summary(&one_shot), "kfold": summary(&kfold) }))
}

pub fn metrics(a: MetricsArgs, progress: Progress) -> Result<()> {
    require_file(&a.hd, "--hd")?;
    require_file(&a.ld, "--ld")?;
    if let Some(l) = &a.labels {
        require_file(l, "--labels")?;
    }
    if let Some(c) = &a.curves {
        require_writable(c, "--curves")?;
    }
    let hd = load_matrix(&a.hd, Format::from_path(&a.hd)).with_context(|| format!("loading {}", a.hd.display()))?;
    let ld = load_matrix(&a.ld, Format::from_path(&a.ld)).with_context(|| format!("loading {}", a.ld.display()))?;
    let n = hd.rows();
    if ld.rows() != n {
        anyhow::bail!("--hd has {n} rows but --ld has {}", ld.rows());
    }
    if a.k_max == 0 || a.k_max + 1 >= n {
        return Err(usage(format!("--k-max must lie in 1..{}", n.saturating_sub(1))));
    }
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != n {
            anyhow::bail!("--labels has {} entries for {n} rows", l.len());
        }
    }

    let start = Instant::now();
    let curve = rnx_of_embedding(&hd, &ld, a.k_max)?;
    progress.emit(
        "progress",
        json!({ "stage": "rnx", "elapsed": start.elapsed().as_secs_f64() }),
    );
    if let Some(path) = &a.curves {
        std::fs::write(path, curve.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut marks = serde_json::Map::new();
    for k in [1usize, 10, 100, 1000]
        .into_iter()
        .filter(|&k| k < a.k_max)
        .chain([a.k_max])
    {
        marks.insert(k.to_string(), json!(curve.rnx[k - 1]));
    }
    let mut summary = json!({ "n": n, "k_max": a.k_max, "auc": curve.auc, "rnx": marks });
    if let Some(labels) = &labels {
        summary["accuracy"] = json!({
            "ld": accuracy_json(&ld, labels, &a)?,
            "hd": accuracy_json(&hd, labels, &a)?,
        });
        progress.emit(
            "progress",
            json!({ "stage": "accuracy", "elapsed": start.elapsed().as_secs_f64() }),
        );
    }
    print_json(&summary)
}

pub fn knn_bench(a: KnnBenchArgs, progress: Progress) -> Result<()> {
    require_file(&a.input.input, "--input")?;
    let store = load(&a.input, Metric::Euclidean)?;
    let n = store.n_live();
    if a.k == 0 || a.k >= n {
        return Err(usage(format!("--k must lie in 1..{n}")));
    }
    let truth = exact_knn(&store, a.k)?;
    let start = Instant::now();
    let mut trace = Vec::new();
    let mut record = |pass: u64, iteration: Option<u64>, table: &NeighborTable| {
        let r = recall(&truth, table, a.k);
        let mut point = json!({ "pass": pass, "recall": r, "elapsed": start.elapsed().as_secs_f64() });
        if let Some(it) = iteration {
            point["iteration"] = json!(it);
        }
        progress.emit("progress", point.clone());
        trace.push(point);
        r
    };

    let (final_recall, extra) = match a.baseline {
        Baseline::Nnd if a.iters == 0 => {
            let live = store.sorted_live_indices();
            let table = init_table(store.n_slots(), &live, a.k, a.seed, Space::Hd, &|i, j| {
                store.dist2(i, j)
            })?;
            (record(0, None, &table), json!({ "passes": 0, "converged": false }))
        }
        Baseline::Nnd => {
            let report = nnd_with_trace(&store, a.k, a.seed, a.iters, |p, t| {
                record(p as u64, None, t);
            })?;
            let r = recall(&truth, &report.table, a.k);
            (
                r,
                json!({ "passes": report.passes, "converged": report.converged, "updates": report.updates }),
            )
        }
        Baseline::Cross => {
            let perplexity = a.perplexity.unwrap_or((a.k as f64 / 1.6).min(30.0));
            let config = SessionConfig {
                k_hd: a.k,
                k_ld: a.k,
                perplexity,
                seed: a.seed,
                ..Default::default()
            };
            config.validate(n).map_err(config_error)?;
            let mut session = Session::new(store, config)?;
            record(0, Some(0), session.hd_table());
            for _ in 0..a.iters {
                if session.step()?.hd_refined {
                    record(session.hd_passes(), Some(session.iteration()), session.hd_table());
                }
            }
            let r = recall(&truth, session.hd_table(), a.k);
            (r, json!({ "passes": session.hd_passes(), "iterations": a.iters }))
        }
    };
    let mut out = json!({
        "baseline": match a.baseline { Baseline::Nnd => "nnd", Baseline::Cross => "cross" },
        "n": n,
        "k": a.k,
        "seed": a.seed,
        "final_recall": final_recall,
        "trace": trace,
    });
    if let (Some(o), Some(e)) = (out.as_object_mut(), extra.as_object()) {
        o.extend(e.clone());
    }
    print_json(&out)
}

pub fn hierarchy(a: HierarchyArgs, progress: Progress) -> Result<()> {
    require_file(&a.input.input, "--input")?;
    require_writable(&a.out, "--out")?;
    if a.min_pts == 0 {
        return Err(usage("--min-pts must be at least 1"));
    }
    if let Some(eps) = a.eps {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(usage("--eps must be > 0"));
        }
    }
    if !(a.eps_factor.is_finite() && a.eps_factor > 0.0) {
        return Err(usage("--eps-factor must be > 0"));
    }
    let store = load(&a.input, Metric::Euclidean)?;
    let config = SessionConfig {
        dim: a.dim,
        perplexity: a.perplexity,
        seed: a.seed,
        ..Default::default()
    };
    config.validate(store.n_live()).map_err(config_error)?;
    let mut session = Session::new(store, config)?;
    let params = HierarchyParams {
        settle_iters: a.settle,
        dbscan: a.eps.map(|eps| DbscanParams {
            eps,
            min_pts: a.min_pts,
        }),
        eps_factor: a.eps_factor,
        min_pts: a.min_pts,
        prototypes: a.prototypes,
    };
    let start = Instant::now();
    let run = build_hierarchy(&mut session, &a.alphas.0, &params)?;
    progress.emit(
        "progress",
        json!({ "stage": "hierarchy", "iteration": session.iteration(), "elapsed": start.elapsed().as_secs_f64() }),
    );
    let graph = &run.graph;
    graph
        .export(&a.out, GraphFormat::from_path(&a.out))
        .with_context(|| format!("writing {}", a.out.display()))?;
    let levels: Vec<Value> = graph
        .levels
        .iter()
        .enumerate()
        .map(|(l, alpha)| {
            let noise = run.labels[l].iter().filter(|&&x| x < 0).count();
            json!({ "alpha": alpha, "clusters": graph.nodes_at(l).count(), "noise": noise })
        })
        .collect();
    print_json(&json!({
        "levels": levels,
        "nodes": graph.nodes.len(),
        "edges": graph.edges.len(),
        "output": a.out.display().to_string(),
    }))
}

pub fn serve(a: ServeArgs, progress: Progress, threads: Option<usize>) -> Result<()> {
    require_file(&a.input.input, "--input")?;
    if let Some(dir) = &a.ui {
        require_dir(dir, "--ui")?;
    }
    if let Some(dir) = &a.snapshot_dir {
        require_dir(dir, "--snapshot-dir")?;
    }
    if !(a.frame_hz.is_finite() && a.frame_hz > 0.0) {
        return Err(usage("--frame-hz must be > 0"));
    }
    let store = load(&a.input, a.session.metric)?;
    let session = session_config(&a.session);
    session.validate(store.n_live()).map_err(config_error)?;
    let config = tailne_server::ServerConfig {
        bind: (a.host, a.port).into(),
        frame_hz: a.frame_hz,
        static_dir: a.ui.clone(),
        snapshot_dir: a.snapshot_dir.clone(),
        start_paused: a.paused,
        session,
    };
    let mut runtime = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        runtime.worker_threads(n);
    }
    let runtime = runtime.enable_all().build()?;
    runtime.block_on(async move {
        let server = tailne_server::start(store, config).await?;
        progress.emit(
            "listening",
            json!({ "addr": server.addr.to_string(), "endpoint": "/session" }),
        );
        tokio::signal::ctrl_c().await?;
        progress.emit("shutdown", json!({}));
        server.shutdown().await?;
        Ok(())
    })
}
