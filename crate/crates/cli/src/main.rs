mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Estimate where a monotone response crosses a target level.
#[derive(Debug, Parser)]
#[command(name = "isoinv", version, about)]
pub struct Cli {
    /// Master RNG seed. Defaults to 1, to the config file's seed for `study`,
    /// and to the built-in table seed for `quantile-table`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "ISOINV_WORKERS")]
    pub workers: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the crossing point from an `x,y` data file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study from a TOML or JSON config.
    Study(StudyArgs),
    /// Simulate and write a table of Chernoff upper quantiles.
    QuantileTable(QuantileTableArgs),
    /// Generate a loading/delay dataset from the queue simulator.
    QueueDemo(QueueDemoArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV file with header `x,y`.
    #[arg(long)]
    pub data: PathBuf,
    /// Target response level.
    #[arg(long)]
    pub theta0: f64,
    /// POSP, PTSP or PBTSP.
    #[arg(long, default_value = "POSP")]
    pub procedure: String,
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.025)]
    pub beta: f64,
    /// Stage-one fraction; stage one uses every round(1/p)-th data point.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Bootstrap replicates.
    #[arg(long = "bootstrap", short = 'B', default_value_t = 1000)]
    pub bootstrap: usize,
    /// Fixed tuning exponent (requires --k); default is the Wald-interval rule.
    #[arg(long, requires = "k")]
    pub gamma: Option<f64>,
    #[arg(long, requires = "gamma")]
    pub k: Option<f64>,
    /// Estimate a local variance function and weight stage two by it.
    #[arg(long)]
    pub heteroskedastic: bool,
    /// Live stage-two source, e.g. `queue:service_rate=0.35,horizon=4000`.
    #[arg(long, conflicts_with = "stage2_file")]
    pub oracle: Option<String>,
    /// Pre-recorded stage-two responses (`x,y`) at the chosen L and U.
    #[arg(long)]
    pub stage2_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantileTableArgs {
    /// Number of simulated draws M.
    #[arg(long, default_value_t = 1_000_000)]
    pub replications: usize,
    /// Grid half-width T.
    #[arg(long, default_value_t = 3.0)]
    pub half_width: f64,
    /// Grid step.
    #[arg(long, default_value_t = 0.002)]
    pub step: f64,
    /// Output CSV; a `.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueueDemoArgs {
    #[arg(long, default_value_t = 0.14)]
    pub start: f64,
    #[arg(long, default_value_t = 0.95)]
    pub stop: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Explicit comma-separated loadings, replacing the start/stop/step grid.
    #[arg(long, value_delimiter = ',')]
    pub points: Option<Vec<f64>>,
    /// Simulation runs per loading (one output row each).
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.35)]
    pub service_rate: f64,
    #[arg(long, default_value_t = 4000)]
    pub horizon: usize,
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    /// Output CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
