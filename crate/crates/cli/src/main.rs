mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Bad flags or paths, detected before any work starts. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// JSON-lines event stream on stderr.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    quiet: bool,
}

impl Progress {
    pub fn emit(&self, event: &str, mut fields: serde_json::Value) {
        if self.quiet {
            return;
        }
        if let Some(map) = fields.as_object_mut() {
            map.insert("event".into(), event.into());
        }
        eprintln!("{fields}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let progress = Progress { quiet: cli.quiet };
    match run(cli, progress) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            eprintln!(
                "{}",
                serde_json::json!({ "event": "error", "message": format!("{e:#}") })
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli, progress: Progress) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Embed(a) => commands::embed(a, progress),
        Command::Metrics(a) => commands::metrics(a, progress),
        Command::KnnBench(a) => commands::knn_bench(a, progress),
        Command::Hierarchy(a) => commands::hierarchy(a, progress),
        Command::Serve(a) => commands::serve(a, progress, cli.threads),
    }
}
