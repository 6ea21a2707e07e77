//! `aggstab`: graph generation, MovieLens ingestion, training, filter
//! certification and perturbation sweeps.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 data error, 4 numeric
//! domain error (for example a spectral domain that misses the spectrum).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(aggstab::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use aggstab::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Data(_) => 3,
                E::NonFinite(_) | E::OmegaCoverage { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<aggstab::Error> for CliError {
    fn from(e: aggstab::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "aggstab", version, about = "Aggregation GNN stability toolkit")]
struct Cli {
    /// Maximum worker threads for parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphKind {
    Er,
    Sbm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormKind {
    None,
    Sym,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a random graph and write it as JSON.
    GenGraph {
        #[arg(long, value_enum)]
        model: GraphKind,
        #[arg(long)]
        n: usize,
        /// Edge probability (er).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        p_in: Option<f64>,
        #[arg(long)]
        p_out: Option<f64>,
        #[arg(long, value_enum, default_value = "sym")]
        normalization: NormKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a Pearson similarity graph (and optionally a rating task) from a ratings file.
    Ingest {
        #[arg(long)]
        ratings: PathBuf,
        /// Number of most-rated movies kept as nodes.
        #[arg(long)]
        movies: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Movie whose ratings become the regression target.
        #[arg(long)]
        target: Option<u32>,
        #[arg(long, default_value_t = 2)]
        min_common: usize,
        /// Neighbors kept per node; 0 keeps all.
        #[arg(long, default_value_t = 40)]
        top_k: usize,
        #[arg(long, default_value_t = 1)]
        min_ratings: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print Lipschitz constants and bound constants of a checkpoint's first layer.
    Certify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        omega_lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        omega_hi: f64,
        #[arg(long, default_value_t = aggstab::filters::DEFAULT_GRID)]
        grid: usize,
        #[arg(long, default_value_t = f64::INFINITY)]
        l0_max: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        l1_max: f64,
        /// Node count used for the bound constants; taken from the model when fixed.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Run a perturbation sweep from a run config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild summary and plot files from a records CSV.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = aggstab::stability::DEFAULT_SLACK)]
        slack: f64,
    },
}

/// Flag, then `AGGSTAB_SEED`, then the fallback.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("AGGSTAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("AGGSTAB_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenGraph {
            model,
            n,
            p,
            blocks,
            p_in,
            p_out,
            normalization,
            seed,
            out,
        } => commands::gen_graph(
            commands::GenGraphArgs {
                kind: model,
                n,
                p,
                blocks,
                p_in,
                p_out,
                normalization,
            },
            resolve_seed(seed, 0)?,
            &out,
        ),
        Command::Ingest {
            ratings,
            movies,
            out_dir,
            target,
            min_common,
            top_k,
            min_ratings,
            seed,
        } => commands::ingest(
            commands::IngestArgs {
                ratings,
                movies,
                out_dir,
                target,
                min_common,
                top_k,
                min_ratings,
            },
            resolve_seed(seed, 0)?,
        ),
        Command::Train { config, seed } => commands::train(&config, seed),
        Command::Certify {
            model,
            omega_lo,
            omega_hi,
            grid,
            l0_max,
            l1_max,
            nodes,
        } => commands::certify(&model, omega_lo, omega_hi, grid, l0_max, l1_max, nodes),
        Command::Sweep { config, seed } => commands::sweep(&config, seed),
        Command::Report { records, out_dir, slack } => commands::report(&records, &out_dir, slack),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
