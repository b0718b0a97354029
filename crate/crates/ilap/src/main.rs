//! Command line for the allocation and pricing engine: exact solves,
//! simulation runs, paired comparisons, and ratings ingestion.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ilap_core::data::{
    complete_and_scale, ingest_ratings, matrix_from_csv, matrix_to_csv, COMPLETION_GAMMA,
    COMPLETION_MAX_ITERS, COMPLETION_TOL,
};
use ilap_core::harness::{run_experiment, write_comparison, SimConfig};
use ilap_core::market::ConstraintProfile;
use ilap_core::rng::{stream, Purpose};
use ilap_core::solver::solve_allocation;

#[derive(Parser)]
#[command(
    name = "ilap",
    version,
    about = "Interactive learning for allocation and pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one market exactly and print welfare, pairs, and prices.
    Solve {
        /// Dense reward matrix CSV (rows are users).
        #[arg(long)]
        theta: PathBuf,
        /// Integer demand per user, comma or newline separated.
        #[arg(long)]
        demands: PathBuf,
        /// Integer capacity per item, comma or newline separated.
        #[arg(long)]
        capacities: PathBuf,
        /// Also print the minimal supporting prices.
        #[arg(long)]
        min_prices: bool,
    },
    /// Run a configured experiment and write per-seed and aggregate CSVs.
    Simulate {
        /// Configuration file of `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several configurations over a shared environment and summarize.
    Compare {
        /// Comma-separated configuration files.
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a sparse ratings table to a dense bounded matrix CSV.
    Ingest {
        /// Ratings CSV with user, item, rating columns.
        #[arg(long)]
        ratings: PathBuf,
        /// Factorization rank.
        #[arg(long)]
        rank: usize,
        /// Destination for the completed dense matrix CSV.
        #[arg(long)]
        out: PathBuf,
        /// Seed for the completion initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve {
            theta,
            demands,
            capacities,
            min_prices,
        } => solve(&theta, &demands, &capacities, min_prices),
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Compare { configs, out } => compare(&configs, &out),
        Command::Ingest {
            ratings,
            rank,
            out,
            seed,
        } => ingest(&ratings, rank, &out, seed),
    }
}

/// Reads a vector of nonnegative integers, separated by commas or lines.
fn read_counts(path: &Path) -> Result<Vec<u32>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for field in text.split([',', '\n', '\r']) {
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        values.push(
            field
                .parse::<u32>()
                .with_context(|| format!("parsing count {field:?} in {}", path.display()))?,
        );
    }
    Ok(values)
}

fn solve(theta: &Path, demands: &Path, capacities: &Path, min_prices: bool) -> Result<()> {
    let text =
        std::fs::read_to_string(theta).with_context(|| format!("reading {}", theta.display()))?;
    let matrix = matrix_from_csv(&text)?;
    let cons = ConstraintProfile::new(read_counts(demands)?, read_counts(capacities)?)?;
    let out = solve_allocation(&matrix, &cons)?;
    println!("welfare,{:.8e}", out.welfare);
    for &(u, i) in out.allocation.pairs() {
        println!("pair,{u},{i}");
    }
    if min_prices {
        for (i, p) in out.prices.as_slice().iter().enumerate() {
            println!("price,{i},{p:.8e}");
        }
    }
    Ok(())
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg =
        SimConfig::from_file(config).with_context(|| format!("loading {}", config.display()))?;
    let report = run_experiment(&cfg, out)?;
    for path in &report.per_seed_paths {
        println!("wrote {}", path.display());
    }
    println!("wrote {}", report.aggregate_path.display());
    Ok(())
}

fn compare(configs: &[PathBuf], out: &Path) -> Result<()> {
    let mut cfgs = Vec::with_capacity(configs.len());
    for path in configs {
        cfgs.push(
            SimConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
        );
    }
    let entries = write_comparison(&cfgs, out)?;
    for e in &entries {
        println!(
            "{}: cum_regret {:.8e} ± {:.8e}, cum_instability {:.8e} ± {:.8e}",
            e.algorithm.as_str(),
            e.cum_regret_mean,
            e.cum_regret_std,
            e.cum_instability_mean,
            e.cum_instability_std,
        );
    }
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

fn ingest(ratings: &Path, rank: usize, out: &Path, seed: u64) -> Result<()> {
    let table = ingest_ratings(ratings)?;
    println!(
        "parsed {} users, {} items, {} entries ({} duplicate overwrites), fill rate {:.3}",
        table.n_users(),
        table.n_items(),
        table.entries.len(),
        table.duplicates,
        table.fill_rate(),
    );
    let mut rng = stream(seed, Purpose::Completion, &[rank as u64]);
    let completed = complete_and_scale(
        &table,
        rank,
        COMPLETION_GAMMA,
        COMPLETION_TOL,
        COMPLETION_MAX_ITERS,
        &mut rng,
    )?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, matrix_to_csv(completed.values()))?;
    println!("wrote {}", out.display());
    Ok(())
}
