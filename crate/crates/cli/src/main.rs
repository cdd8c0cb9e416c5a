use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Parser, Subcommand};
use ppdl_core::config::{parse_config, Method, SimConfig};
use ppdl_core::report::{compare_runs, write_outputs};
use ppdl_core::sim::run_experiment;

/// Experiment runner for bandit-driven decentralized learning.
#[derive(Parser)]
#[command(name = "ppdl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        /// Path to the TOML or JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's method (ppdl, ppdl-var, dac, random, oracle, local).
        #[arg(long)]
        method: Option<String>,
        /// Override the config's seed for a single run.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seed sweep; each seed writes to <out-dir>/seed-<s>.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Directory for the output files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare summary.json files across run directories.
    Compare {
        /// Run directories; the first is the baseline for deltas.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, method, seed, seeds, out_dir } => {
            run(&config, method.as_deref(), seed, seeds, &out_dir)
        }
        Command::Compare { dirs } => {
            let table = compare_runs(&dirs)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn run(
    config_path: &Path,
    method: Option<&str>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    out_dir: &Path,
) -> Result<()> {
    let (mut config, defaults) = parse_config(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    for line in &defaults {
        eprintln!("default: {line}");
    }
    if let Some(name) = method {
        config.method = Method::from_str(name)?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    match seeds {
        None => run_one(&config, out_dir),
        Some(list) => {
            if list.is_empty() {
                bail!("--seeds needs at least one seed");
            }
            for s in list {
                let mut per_seed = config.clone();
                per_seed.seed = s;
                let dir = out_dir.join(format!("seed-{s}"));
                run_one(&per_seed, &dir).with_context(|| format!("seed {s} failed"))?;
            }
            Ok(())
        }
    }
}

fn run_one(config: &SimConfig, out_dir: &Path) -> Result<()> {
    let started = Utc::now();
    let result = run_experiment(config)?;
    write_outputs(config, &result, started, out_dir)?;
    println!(
        "{} seed {}: mean over clusters {:.4}, mean over nodes {:.4} -> {}",
        config.method.as_str(),
        config.seed,
        result.mean_over_clusters,
        result.mean_over_nodes,
        out_dir.display()
    );
    Ok(())
}
