use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use precad::experiment::{
    account, run_experiment, sweep, validate_bench, write_bench_csv, AccountantQuery, ExperimentConfig,
    ExperimentError, SweepAxis,
};
use precad::protocol::Variant;

/// Simulator for two-server secure aggregation with differential privacy.
#[derive(Parser)]
#[command(name = "precad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over every configured seed.
    Simulate(RunArgs),
    /// Run one experiment per value of a single parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter to vary: n, k, c or sigma.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print privacy and robustness figures as JSON.
    Accountant {
        /// JSON file with the query; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        p_i: Option<f64>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        malicious: Option<u32>,
    },
    /// Time secure norm validation and print CSV.
    ValidateBench {
        /// Comma-separated vector dimensions.
        #[arg(long, value_delimiter = ',', default_value = "16,256,4096")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics and transcripts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_query(path: &Path) -> Result<AccountantQuery, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args)?;
            let res = run_experiment(&cfg)?;
            if let Some(last) = res.final_mean() {
                print_json(last)?;
            }
        }
        Command::Sweep { run, axis, values } => {
            let cfg = load_config(&run)?;
            let rows = sweep(&cfg, axis, &values)?;
            print_json(&rows)?;
        }
        Command::Accountant { config, q, p_i, rounds, sigma, delta, malicious } => {
            let mut query = match &config {
                Some(path) => load_query(path)?,
                None => AccountantQuery::default(),
            };
            query.q = q.unwrap_or(query.q);
            query.p_i = p_i.unwrap_or(query.p_i);
            query.rounds = rounds.unwrap_or(query.rounds);
            query.sigma = sigma.unwrap_or(query.sigma);
            query.delta = delta.unwrap_or(query.delta);
            query.malicious = malicious.unwrap_or(query.malicious);
            // every accountant failure stems from an out-of-range input
            let report = account(&query).map_err(|e| Failure::Config(e.to_string()))?;
            print_json(&report)?;
        }
        Command::ValidateBench { dims, trials, clip, seed, out } => {
            let rows = validate_bench(&dims, trials, clip, seed)?;
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                    write_bench_csv(BufWriter::new(file), &rows)?;
                }
                None => write_bench_csv(io::stdout().lock(), &rows)?,
            }
            let _ = io::stdout().flush();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
