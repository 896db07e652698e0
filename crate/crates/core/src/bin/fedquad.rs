use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use fedquad::config::ExperimentConfig;
use fedquad::data::{
    generate_blobs, load_dataset, partition_dirichlet, partition_iid, partition_manifest_csv,
    BlobConfig, DatasetFormat,
};
use fedquad::experiment::{compare_runs, run_experiment, write_run_dir};
use fedquad::report::summary_csv;
use fedquad::{FedQuadError, Result};

/// Overrides the number of worker threads used for client training.
const WORKERS_ENV: &str = "FEDQUAD_WORKERS";

#[derive(Parser)]
#[command(
    name = "fedquad",
    version,
    about = "Federated quadruplet-loss training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Iid,
    Dirichlet,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-blob dataset as CSV.
    Generate {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        std: f64,
        /// Distance between class centers; defaults to 4 * std.
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a dataset CSV across clients and write a `client_id,row_index` manifest.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        clients: usize,
        #[arg(long, value_enum, default_value = "iid")]
        mode: Mode,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1)]
        min_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a federated experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the final round of two or more runs.
    Compare {
        /// Run directories or `results.csv` files.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| FedQuadError::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(FedQuadError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            classes,
            dim,
            per_class,
            std,
            separation,
            seed,
            out,
        } => {
            let mut cfg = BlobConfig::new(classes, dim, per_class, std, seed);
            cfg.center_distance = separation;
            let ds = generate_blobs(&cfg)?;
            emit(out.as_deref(), &ds.to_csv_string())
        }
        Command::Partition {
            data,
            classes,
            clients,
            mode,
            alpha,
            min_samples,
            seed,
            out,
        } => {
            let ds = load_dataset(&data, DatasetFormat::Csv, classes)?;
            let parts = match (mode, alpha) {
                (Mode::Iid, None) => partition_iid(&ds, clients, seed)?,
                (Mode::Dirichlet, Some(a)) => {
                    partition_dirichlet(&ds, clients, a, seed, min_samples)?
                }
                (Mode::Iid, Some(_)) => {
                    return Err(FedQuadError::Config(
                        "--alpha needs --mode dirichlet".into(),
                    ))
                }
                (Mode::Dirichlet, None) => {
                    return Err(FedQuadError::Config(
                        "--mode dirichlet needs --alpha".into(),
                    ))
                }
            };
            emit(out.as_deref(), &partition_manifest_csv(&parts))
        }
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.federation.workers = workers_from_env()?;
            cfg.validate()?;
            let (data, run) = run_experiment(&cfg)?;
            write_run_dir(&cfg.output_dir, &cfg, &data, &run)?;
            if let Some(last) = run.reports.last() {
                info!(
                    "finished {} rounds: accuracy {:.4}, ratio {:.4}",
                    last.round, last.accuracy, last.ratio
                );
            }
            Ok(())
        }
        Command::Compare { runs, out } => {
            let rows = compare_runs(&runs)?;
            emit(out.as_deref(), &summary_csv(&rows))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
