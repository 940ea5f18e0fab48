mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mixfpca::covfit::{DEFAULT_EPSILON, DEFAULT_K_CANDIDATES};
use mixfpca::fpca::DEFAULT_VAR_THRESHOLD;
use mixfpca::kendall::DEFAULT_C0;

#[derive(Debug, Parser)]
#[command(name = "mixfpca", version, about = "Multivariate FPCA for mixed-type functional data")]
struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from one of the simulation scenarios.
    Simulate(SimulateArgs),
    /// Fit the latent correlation model and run FPCA.
    Fit(FitArgs),
    /// Predict latent and observed-scale curves for subjects.
    Predict(PredictArgs),
    /// Export FPC scores from an eigen file.
    Scores(ScoresArgs),
    /// Monte Carlo ISE comparison of the estimators.
    Benchmark(BenchmarkArgs),
    /// Render a model or eigen file as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    M2fpca,
    #[value(name = "ps_m2fpca")]
    PsM2fpca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Stationary,
    Nonstationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMethodArg {
    M2fpca,
    #[value(name = "ps_m2fpca")]
    PsM2fpca,
    #[value(name = "naive_mfpca")]
    NaiveMfpca,
}

/// Dataset location: long-form CSV plus its JSON sidecar.
#[derive(Debug, Args)]
struct DataArgs {
    /// Long-form CSV with columns subject_id, component, time, value.
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON with component types and time range (default: the data
    /// path with a .json extension).
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitOptions {
    #[arg(long, value_enum, default_value = "m2fpca")]
    method: MethodArg,
    /// Number of equispaced grid points on [0, 1].
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    grid: u64,
    /// Kendall cells with at most this many subject pairs are dropped.
    #[arg(long, default_value_t = DEFAULT_C0)]
    c0: u64,
    /// Eigenvalue floor of the PD projection.
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = positive_f64)]
    epsilon: f64,
    /// Comma-separated spline basis sizes tried by BIC.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_CANDIDATES.to_vec(), value_parser = basis_size)]
    k_candidates: Vec<usize>,
    /// Cumulative explained variance used to choose the number of components.
    #[arg(long, default_value_t = DEFAULT_VAR_THRESHOLD, value_parser = fraction)]
    var_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "stationary")]
    scenario: ScenarioArg,
    /// Number of subjects.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    n: u64,
    /// Number of components.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    p: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    grid: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Subject identifiers to predict (default: all).
    #[arg(long, value_delimiter = ',')]
    subject: Vec<String>,
    /// Comma-separated prediction times on the data's time scale (default:
    /// the model grid).
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoresArgs {
    /// Eigen JSON written by `fit`.
    #[arg(long)]
    eigen: PathBuf,
    /// Dataset used for subject and component names.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum, default_value = "stationary")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    n: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    p: u64,
    /// Monte Carlo replications.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Comma-separated estimators to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [BenchMethodArg::M2fpca, BenchMethodArg::PsM2fpca, BenchMethodArg::NaiveMfpca])]
    methods: Vec<BenchMethodArg>,
    #[command(flatten)]
    options: FitOptions,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Model or eigen JSON.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1], got {s:?}")),
    }
}

fn basis_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 3 => Ok(v),
        _ => Err(format!("basis sizes must be integers ≥ 3, got {s:?}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, cli.threads),
        Command::Fit(a) => commands::fit(a, cli.threads),
        Command::Predict(a) => commands::predict(a, cli.threads),
        Command::Scores(a) => commands::scores(a, cli.threads),
        Command::Benchmark(a) => commands::benchmark(a, cli.threads),
        Command::Plot(a) => commands::plot(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
