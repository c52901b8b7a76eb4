use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use treewave::config::parse_config;
use treewave::core::analysis::ConstructionOptions;
use treewave::pipeline::{self, AnalyzeOptions};

#[derive(Parser)]
#[command(name = "treewave", version, about = "Tree-indexed Markov wavelet series: sample, predict, analyze, verify")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "treewave.toml")]
    config: PathBuf,
    /// Overrides `run.output_dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the tree and write `tree.hmtt`.
    Simulate,
    /// Derived parameters as JSON.
    Params,
    /// Predicted spectrum as JSON.
    Spectrum,
    /// Synthesize the path on the configured grid.
    Synth {
        /// Tree file from `simulate` (sampled afresh when absent).
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Also write `path.csv`.
        #[arg(long)]
        csv: bool,
    },
    /// Hölder field, level-set covers and large-deviation spectrum.
    Analyze {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Exponents whose level sets are measured (repeatable).
        #[arg(long = "h")]
        h: Vec<f64>,
        /// Level-set half-width as a multiple of h_low.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Also estimate the oscillation exponent at every grid point.
        #[arg(long)]
        beta: bool,
        #[arg(long, default_value_t = 4)]
        arcs: usize,
    },
    /// Nested-interval construction of a point with exponent h.
    ConstructPoint {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long = "h")]
        h: f64,
        #[arg(long, default_value_t = ConstructionOptions::default().rho_cap)]
        rho_cap: f64,
        /// Earliest starting level (default: the estimator window start).
        #[arg(long)]
        j0_min: Option<usize>,
        #[arg(long, default_value_t = ConstructionOptions::default().coverage)]
        coverage: f64,
    },
    /// Monte Carlo frequency of an event against its exact probability.
    Verify {
        /// s-empty, fresh-nonempty, root-survival, chain-absent, theta-nonempty.
        #[arg(long)]
        event: String,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Tree depth (default: 16, or run.depth if smaller).
        #[arg(long)]
        depth: Option<usize>,
    },
}

fn print<T: Serialize>(v: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (`| head`) is not a failure of the run.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("[config] cannot read {}", cli.config.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| anyhow::anyhow!("[config] {}: {e}", cli.config.display()))?;
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    match cli.command {
        Command::Simulate => print(&pipeline::simulate(&cfg)?)?,
        Command::Params => print(&pipeline::params(&cfg)?)?,
        Command::Spectrum => print(&pipeline::spectrum(&cfg)?)?,
        Command::Synth { tree, csv } => print(&pipeline::synth(&cfg, tree.as_deref(), csv)?)?,
        Command::Analyze {
            tree,
            h,
            eps,
            beta,
            arcs,
        } => {
            let r = pipeline::analyze(
                &cfg,
                tree.as_deref(),
                &AnalyzeOptions {
                    h_values: h,
                    eps,
                    beta,
                    arcs,
                },
            )?;
            // The per-point field lives in holder.csv; keep stdout short.
            print(&serde_json::json!({
                "provenance": r.provenance,
                "median_holder": r.median_holder,
                "clamped_fraction": r.clamped_fraction,
                "level_sets": r.level_sets.iter().map(|l| serde_json::json!({
                    "h": l.h, "exact_dimension": l.exact_dimension, "predicted": l.predicted,
                })).collect::<Vec<_>>(),
            }))?
        }
        Command::ConstructPoint {
            tree,
            h,
            rho_cap,
            j0_min,
            coverage,
        } => {
            let (r, _) = pipeline::construct_point(
                &cfg,
                tree.as_deref(),
                h,
                ConstructionOptions {
                    rho_cap,
                    j0_min: j0_min.unwrap_or(ConstructionOptions::for_window(cfg.j_min).j0_min),
                    coverage,
                },
            )?;
            print(&r)?;
        }
        Command::Verify { event, trials, depth } => {
            let depth = depth.unwrap_or(cfg.depth.min(16));
            let r = pipeline::verify(&cfg, &event, trials, depth)?;
            print(&r)?;
            return Ok(r.pass != Some(false));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verify: oracle outside the Monte Carlo interval");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
