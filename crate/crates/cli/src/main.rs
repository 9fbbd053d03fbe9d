//! `specgp`: build and validate quadrature rules, run weight-space GP
//! regression, fit hyperparameters and benchmark scaling.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] specgp::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use specgp::Error as E;
        match self {
            CliError::Lib(E::Build { .. } | E::Plan(_) | E::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "specgp", version, about = "Fourier representations of Matérn Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Construct a quadrature rule for a hyperparameter box.
    Build(BuildArgs),
    /// Tabulate L² kernel errors of a rule.
    Validate(ValidateArgs),
    /// Regress on CSV or synthetic data and write predictions.
    Regress(RegressArgs),
    /// Projected gradient ascent on the log marginal likelihood.
    Fit(FitArgs),
    /// Time regressions over a list of data sizes (fast sums forced).
    Bench(BenchArgs),
    /// Write the built-in 86-node rule in the rule file format.
    ExportEmbeddedRule(ExportArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Box as "a,b,nu_lo,nu_hi,rho_lo,rho_hi".
    #[arg(long = "box", default_value = "-1,1,1.5,3.5,0.1,0.5")]
    pub hyper_box: String,
    /// Target pointwise kernel accuracy.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Chebyshev points per hyperparameter axis.
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    /// Lag points.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0x5eed_5eed)]
    pub seed: u64,
    /// Accept a validated error up to 2·eps.
    #[arg(long)]
    pub loose: bool,
    /// Skip the node elimination pass.
    #[arg(long)]
    pub no_refine: bool,
    /// Write the rule even when validation misses the target.
    #[arg(long)]
    pub uncertified: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Rule file, or "embedded".
    #[arg(long, default_value = "embedded")]
    pub rule: String,
    /// Restrict the table to one (nu, rho); needs --rho too.
    #[arg(long, requires = "rho")]
    pub nu: Option<f64>,
    #[arg(long, requires = "nu")]
    pub rho: Option<f64>,
    /// Validation grid as "lags,nus,rhos" for the pointwise error.
    #[arg(long, default_value = "50,20,20")]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with header "x,y"; synthetic data y = cos(3e^x) + noise when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic data size.
    #[arg(long = "N", default_value_t = 100_000)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the dataset used as "x,y" CSV.
    #[arg(long)]
    pub save_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long, default_value = "embedded")]
    pub rule: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    /// Noise variance of the model; synthetic noise is N(0, sigma2), i.e.
    /// sigma2 is a variance, not a standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub sigma2: f64,
    /// Number of equispaced evaluation points over the box interval.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    /// Use gridded exponential sums regardless of size.
    #[arg(long)]
    pub force_fast_path: bool,
    /// Predictions as "x,mean,variance" CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value = "embedded")]
    pub rule: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// Draw data from the prior with "nu,rho,sigma2" instead of the
    /// cos(3e^x) recipe.
    #[arg(long)]
    pub truth: Option<String>,
    /// Initial smoothness.
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Initial lengthscale.
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    /// Initial noise variance.
    #[arg(long, default_value_t = 0.5)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long)]
    pub force_fast_path: bool,
    /// Trajectory as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "embedded")]
    pub rule: String,
    /// Comma-separated data sizes; scientific notation allowed.
    #[arg(long = "N", default_value = "1e5,1e6")]
    pub sizes: String,
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("SPECGP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SPECGP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Build(a) => commands::build(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Regress(a) => commands::regress(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::ExportEmbeddedRule(a) => commands::export_embedded(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
