use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tailne::dataspace::{Format, Metric};

#[derive(Debug, Parser)]
#[command(
    name = "tailne",
    version,
    about = "Heavy-tailed neighbour embedding with interleaved KNN refinement"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress JSON-lines progress on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a dataset and write the coordinates.
    Embed(EmbedArgs),
    /// Neighbourhood preservation curves and 1-NN accuracy.
    Metrics(MetricsArgs),
    /// Recall-versus-pass trace of a KNN algorithm against the exact graph.
    KnnBench(KnnBenchArgs),
    /// Cluster graph across a descending schedule of alpha values.
    Hierarchy(HierarchyArgs),
    /// Host a live session over a websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Dataset file (CSV, or fbin by extension).
    #[arg(long)]
    pub input: PathBuf,
    /// Override the format guessed from the extension.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Embedding dimensionality.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Kernel tail parameter; 1 is the Student-t kernel.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 32)]
    pub k_hd: usize,
    #[arg(long, default_value_t = 16)]
    pub k_ld: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attraction scale.
    #[arg(long, default_value_t = 1.0)]
    pub attract: f64,
    /// Repulsion scale.
    #[arg(long, default_value_t = 1.0)]
    pub repulse: f64,
    /// euclidean or cosine.
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    /// Learning rate (default: N / 12).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Iterations driven by a linear projection of the data at the start.
    #[arg(long, default_value_t = 0)]
    pub jumpstart: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    /// Embedding output (fbin, or CSV for a .csv extension).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Iterations between progress lines.
    #[arg(long, default_value_t = 100)]
    pub progress_every: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// High-dimensional data.
    #[arg(long)]
    pub hd: PathBuf,
    /// Embedding of the same points, same row order.
    #[arg(long)]
    pub ld: PathBuf,
    /// Largest neighbourhood size of the curve.
    #[arg(long)]
    pub k_max: usize,
    /// Class per row, one per line; enables 1-NN accuracy.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write the Q_NX/R_NX curve as CSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Nearest-neighbour descent, run to convergence.
    Nnd,
    /// The interleaved cross-space engine inside an embedding session.
    Cross,
}

#[derive(Debug, Args)]
pub struct KnnBenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Session iterations for `cross`; `0` reports the random initial table.
    /// `nnd` stops at convergence or after this many passes.
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, value_enum)]
    pub baseline: Baseline,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perplexity of the `cross` session (default: min(30, k / 1.6)).
    #[arg(long)]
    pub perplexity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HierarchyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    /// Strictly descending, comma separated.
    #[arg(long, value_parser = parse_alphas, default_value = "1.0,0.5")]
    pub alphas: Alphas,
    /// Iterations before each snapshot.
    #[arg(long, default_value_t = 1500)]
    pub settle: usize,
    /// Graph output, JSON or DOT by extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed DBSCAN radius for every level (default: per-snapshot automatic).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Multiplier on the automatic radius.
    #[arg(long, default_value_t = 2.0)]
    pub eps_factor: f64,
    #[arg(long, default_value_t = 5)]
    pub min_pts: usize,
    /// Store the mean HD vector of each cluster.
    #[arg(long)]
    pub prototypes: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Upper bound on position frames per second.
    #[arg(long, default_value_t = 30.0)]
    pub frame_hz: f64,
    /// Built UI served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Directory for snapshot files.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    /// Start with the optimizer paused.
    #[arg(long)]
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alphas(pub Vec<f64>);

fn parse_alphas(s: &str) -> Result<Alphas, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err("alphas must be positive".into());
    }
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err("alphas must be strictly descending".into());
    }
    Ok(Alphas(values))
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: tailne::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: tailne::Error| e.to_string())
}
