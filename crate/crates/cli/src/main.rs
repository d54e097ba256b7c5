//! `sparse-mv`: fit return models, trace sparse portfolio paths, select a
//! portfolio and backtest strategies from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error (including a
//! missing input file), 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_mv::ErrorClass;

mod commands;
mod settings;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<sparse_mv::Error> for Failure {
    fn from(e: sparse_mv::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "sparse-mv", version, about = "Sparse mean-variance portfolio selection")]
struct Cli {
    /// Settings file of `key = value` lines (a run manifest works too);
    /// command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for all outputs, created if missing [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Root seed for every random stream [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a return model and write the posterior mean moments
    /// (mu.csv, sigma.csv) and optionally every draw (draws.csv).
    Fit(FitArgs),
    /// Trace the sparse solution path and its posterior Sharpe ratios
    /// (path.csv, sharpe_path.csv).
    Path(PathArgs),
    /// As `path`, then apply the band rule and write selection.json.
    Select(PathArgs),
    /// Run the monthly out-of-sample protocol for one or more strategies
    /// (ledger_<name>.csv, comparison.csv, comparison.json).
    Backtest(BacktestArgs),
    /// Generate synthetic return panels.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct ModelArgs {
    /// Asset returns CSV (`date,TICKER...`, dates as YYYYMM).
    #[arg(long, value_name = "CSV")]
    returns: Option<PathBuf>,
    /// niw, factor or dlm [default: niw].
    #[arg(long)]
    model: Option<String>,
    /// Observable factor returns CSV, required by the dlm model.
    #[arg(long, value_name = "CSV")]
    factors: Option<PathBuf>,
    /// Posterior draws for the niw and dlm models [default: 1000].
    #[arg(long)]
    draws: Option<usize>,
    /// Latent factors in the factor model [default: 3].
    #[arg(long)]
    latent_factors: Option<usize>,
    /// Gibbs iterations in the factor model [default: 2000].
    #[arg(long)]
    iters: Option<usize>,
    /// Gibbs burn-in in the factor model [default: 500].
    #[arg(long)]
    burn: Option<usize>,
    #[command(flatten)]
    dlm: DlmArgs,
}

#[derive(Args)]
pub struct DlmArgs {
    /// Loading discount factor [default: 1].
    #[arg(long)]
    delta_beta: Option<f64>,
    /// Residual variance discount factor [default: 0.999].
    #[arg(long)]
    delta_eps: Option<f64>,
    /// Factor mean discount factor [default: 1].
    #[arg(long)]
    delta_c: Option<f64>,
    /// Factor covariance discount factor [default: 0.999].
    #[arg(long)]
    delta_f: Option<f64>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also write every posterior draw to draws.csv.
    #[arg(long)]
    dump_draws: bool,
}

#[derive(Args)]
pub struct GridArgs {
    /// Points on the geometric λ grid [default: 100].
    #[arg(long)]
    grid_points: Option<usize>,
    /// Smallest λ as a fraction of λ_max [default: 0.0001].
    #[arg(long)]
    min_ratio: Option<f64>,
}

#[derive(Args)]
pub struct PathArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Tickers exempt from the sparsity penalty (comma separated).
    #[arg(long, value_delimiter = ',')]
    unpenalized: Vec<String>,
    /// Probability of the central Sharpe band [default: 0.6].
    #[arg(long)]
    band_prob: Option<f64>,
}

#[derive(Args)]
pub struct BacktestArgs {
    /// Asset returns CSV.
    #[arg(long, value_name = "CSV")]
    etf_csv: Option<PathBuf>,
    /// Factor returns CSV on the same dates.
    #[arg(long, value_name = "CSV")]
    factors_csv: Option<PathBuf>,
    /// Strategy to run; repeat for several. One of sparse, sparse_minvar,
    /// full, full_minvar, pick_k[:K], wealthfront, single:TICKER or
    /// fixed:T1=w1,T2=w2,... [default: the first five].
    #[arg(long)]
    strategy: Vec<String>,
    /// Tickers exempt from the sparsity penalty (comma separated).
    #[arg(long, value_delimiter = ',')]
    unpenalized: Vec<String>,
    /// Periods used only for training before the first holding [default: 36].
    #[arg(long)]
    warmup: Option<usize>,
    /// Probability of the central Sharpe band [default: 0.6].
    #[arg(long)]
    band_prob: Option<f64>,
    /// Posterior draws per period [default: 1000].
    #[arg(long)]
    draws: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    dlm: DlmArgs,
}

#[derive(Args)]
pub struct SynthArgs {
    /// iid (correlated normal returns) or factor (assets plus factor
    /// panel) [default: iid].
    #[arg(long)]
    kind: Option<String>,
    /// Number of assets [default: 10 for iid, 25 for factor].
    #[arg(long)]
    assets: Option<usize>,
    /// Number of monthly periods [default: 240].
    #[arg(long)]
    periods: Option<usize>,
    /// Clean market-exposure assets in the factor panel [default: 3].
    #[arg(long)]
    signal: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
