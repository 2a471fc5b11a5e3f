use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ridgemrf::experiments::{run_recovery_experiment, Design, Estimator, RecoverySpec};
use ridgemrf::io::{self as rio, NetworkFormat};
use ridgemrf::optimizer::{fit, AlphaPolicy, FitConfig};
use ridgemrf::parallel::with_threads;
use ridgemrf::sampler::{gibbs_chain, ChainConfig, DEFAULT_BURN_IN, DEFAULT_THINNING};
use ridgemrf::selection::{cross_validate, log_grid};
use ridgemrf::{Error, Result};

#[derive(Parser)]
#[command(name = "ridgemrf", version, about = "Ridge pseudo-likelihood estimation of mixed-type Markov random fields")]
struct Cli {
    /// Worker threads (default: available hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit Theta at a fixed ridge weight.
    Fit(FitArgs),
    /// Cross-validate the ridge weight over a log grid.
    Cv(CvArgs),
    /// Draw a dataset from a parameter file by Gibbs sampling.
    Sample(SampleArgs),
    /// Run a simulation study and write a CSV report.
    Simulate(SimulateArgs),
    /// Export the strongest interactions as a network.
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
    /// Initial aggregation multiplier (default: max(p, 3)).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value = "fixed")]
    alpha_policy: AlphaPolicy,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl OptimizerArgs {
    fn config(&self, lambda: f64) -> FitConfig {
        FitConfig {
            lambda,
            tau: self.tau,
            alpha0: self.alpha,
            alpha_policy: self.alpha_policy,
            max_iterations: self.max_iter,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Typed CSV dataset (`name:family` header cells).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[command(flatten)]
    opt: OptimizerArgs,
    /// Parameter JSON output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write Theta as a plain matrix CSV.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    k_folds: usize,
    #[arg(long, default_value_t = 1e-10)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e2)]
    grid_max: f64,
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    opt: OptimizerArgs,
    /// CV curve JSON output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Refit on all data at the selected lambda and write the parameter JSON here.
    #[arg(long)]
    theta_out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_THINNING)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Lattice,
    Ggm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    RidgeCv,
    Unpenalized,
    Nodewise,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::RidgeCv => Estimator::RidgeCv,
            EstimatorArg::Unpenalized => Estimator::Unpenalized,
            EstimatorArg::Nodewise => Estimator::Nodewise,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "lattice")]
    experiment: Experiment,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variates in the banded Gaussian design.
    #[arg(long, default_value_t = 25)]
    p: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [EstimatorArg::RidgeCv, EstimatorArg::Unpenalized, EstimatorArg::Nodewise])]
    estimators: Vec<EstimatorArg>,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_THINNING)]
    thin: usize,
    #[arg(long, default_value_t = 10)]
    k_folds: usize,
    #[arg(long, default_value_t = 1e-10)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e2)]
    grid_max: f64,
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    /// CSV report output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    theta: PathBuf,
    #[arg(long, conflicts_with = "top_frac")]
    top_k: Option<usize>,
    /// Fraction of all variate pairs to keep, e.g. 0.025.
    #[arg(long)]
    top_frac: Option<f64>,
    #[arg(long, default_value = "dot")]
    format: NetworkFormat,
    /// Network output (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let data = rio::load_dataset(&args.data)?;
    let res = fit(&data, &args.opt.config(args.lambda))?;
    emit(args.out.as_deref(), &(rio::theta_to_json(&res.theta_hat)? + "\n"))?;
    if let Some(path) = &args.heatmap {
        rio::save_heatmap(&res.theta_hat, path)?;
    }
    eprintln!(
        "fit: {} iterations, converged = {}, final gradient norm {:.3e}",
        res.iterations,
        res.converged,
        res.error_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_cv(args: &CvArgs) -> Result<()> {
    let data = rio::load_dataset(&args.data)?;
    let grid = log_grid(args.grid_min, args.grid_max, args.grid_points)?;
    let cfg = args.opt.config(0.0);
    let cv = cross_validate(&data, &grid, args.k_folds, args.seed, &cfg)?;
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&cv).map_err(Error::from)? + "\n"))?;
    if let Some(path) = &args.theta_out {
        let res = fit(&data, &cfg.with_lambda(cv.lambda_opt))?;
        rio::save_theta(&res.theta_hat, path)?;
    }
    eprintln!("cv: lambda_opt = {:e}", cv.lambda_opt);
    Ok(())
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    let theta = rio::load_theta(&args.theta)?;
    let cfg = ChainConfig {
        n_samples: args.n,
        burn_in: args.burn_in,
        thinning: args.thin,
        seed: args.seed,
        initial_state: None,
    };
    let data = gibbs_chain(&theta, &cfg)?;
    let mut buf = Vec::new();
    rio::write_dataset(&data, &mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let design = match args.experiment {
        Experiment::Lattice => Design::Lattice,
        Experiment::Ggm => Design::BandedGaussian { p: args.p },
    };
    let mut spec = RecoverySpec::new(design, args.sizes.clone(), args.replicates, args.seed);
    spec.estimators = args.estimators.iter().map(|&e| e.into()).collect();
    spec.burn_in = args.burn_in;
    spec.thinning = args.thin;
    spec.folds = args.k_folds;
    spec.lambda_grid = log_grid(args.grid_min, args.grid_max, args.grid_points)?;
    let report = run_recovery_experiment(&spec)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    for row in report.rows.iter().filter(|r| r.failure.is_some()) {
        eprintln!(
            "warning: {} failed at n={}, replicate {}: {}",
            row.estimator.tag(),
            row.n,
            row.replicate,
            row.failure.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

fn run_export(args: &ExportArgs) -> Result<()> {
    let theta = rio::load_theta(&args.theta)?;
    let k = match (args.top_k, args.top_frac) {
        (Some(k), _) => k,
        (None, Some(f)) => rio::edges_for_fraction(theta.p(), f)?,
        (None, None) => {
            return Err(Error::Parameter("export needs --top-k or --top-frac".into()));
        }
    };
    let edges = ridgemrf::experiments::top_k_edges(&theta, k)?;
    emit(args.out.as_deref(), &rio::render_network(&theta, &edges, args.format)?)?;
    if let Some(path) = &args.heatmap {
        rio::save_heatmap(&theta, path)?;
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => run_fit(a),
        Command::Cv(a) => run_cv(a),
        Command::Sample(a) => run_sample(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Export(a) => run_export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = with_threads(cli.threads.unwrap_or(0), || dispatch(&cli.command)).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
