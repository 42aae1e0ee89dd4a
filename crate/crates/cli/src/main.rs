//! `spel`: command-line driver for spatial-error empirical likelihood.
//!
//! Exit status is 0 on success, 1 for usage and input errors, and 2 for
//! numerical failures. Every failure prints an `error=<kind>` line on
//! stderr.

mod sample;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use spel_core::el::{self, chi2_quantile, LambdaStatus};
use spel_core::gaussian_ml::{MlContext, MleOptions};
use spel_core::io::write_atomic;
use spel_core::methods::{Failure, MethodRegistry};
use spel_core::montecarlo::{self, ExperimentConfig, ExperimentSpec, TableFormat, WeightSource, WeightsSpec};
use spel_core::sem::Simulator;
use spel_core::weights::{self, WeightFormat};
use spel_core::{Error, ErrorDistribution, Result, SemDesign, Theta, WeightMatrix};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "spel", version = VERSION, about = "Empirical likelihood inference for spatial error models")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, standardize, validate or convert a spatial weight matrix.
    Weights(WeightsArgs),
    /// Draw one sample from the spatial error model.
    Simulate(SimulateArgs),
    /// Test a hypothesized parameter against a sample.
    Test(TestArgs),
    /// Gaussian maximum likelihood fit of a sample.
    Mle(MleArgs),
    /// Monte Carlo coverage of the EL and LR regions.
    Coverage(CoverageArgs),
    /// Calibration of the EL statistic and of the estimating-function covariance.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct WeightsArgs {
    /// Queen-contiguity grid with ROWS x COLS cells.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"], conflicts_with = "input", required_unless_present = "input")]
    grid: Option<Vec<usize>>,
    /// Read the matrix from a file.
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    /// Format of `--in`.
    #[arg(long, default_value = "dense-csv")]
    format: WeightFormat,
    #[arg(long)]
    standardize: bool,
    /// Block-diagonal pooling `I_B ⊗ W`.
    #[arg(long, default_value_t = 1)]
    pool: usize,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Format of `--out` (defaults to `--format`).
    #[arg(long = "out-format")]
    out_format: Option<WeightFormat>,
}

#[derive(Args)]
struct WeightSourceArgs {
    /// Queen-contiguity grid with ROWS x COLS cells.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"], conflicts_with = "weights", required_unless_present = "weights")]
    grid: Option<Vec<usize>>,
    /// Weight matrix file.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    #[arg(long = "weights-format", default_value = "dense-csv")]
    weights_format: WeightFormat,
    /// Row-standardize the matrix (always applied to `--grid`).
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 1)]
    pool: usize,
}

impl WeightSourceArgs {
    fn spec(&self) -> WeightsSpec {
        let source = match (&self.grid, &self.weights) {
            (Some(g), _) => WeightSource::Grid { rows: g[0], cols: g[1] },
            (None, Some(p)) => WeightSource::File {
                path: p.clone(),
                format: self.weights_format,
            },
            (None, None) => unreachable!("clap requires one source"),
        };
        WeightsSpec {
            standardize: self.standardize || self.grid.is_some(),
            source,
            pool: self.pool,
            label: None,
        }
    }

    fn resolve(&self) -> Result<WeightMatrix> {
        self.spec().resolve()
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    weights: WeightSourceArgs,
    /// Regression coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "3.5")]
    beta: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: f64,
    /// Innovation variance (default: variance of the unscaled draw).
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value = "normal")]
    dist: ErrorDistribution,
    #[arg(long)]
    seed: u64,
    /// Prepend an intercept column to the `i/(n+1)` regressor.
    #[arg(long)]
    intercept: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_name = "FILE")]
    sample: PathBuf,
    #[command(flatten)]
    weights: WeightSourceArgs,
    /// Hypothesized `beta_1,...,beta_k,rho,sigma2`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    theta0: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    /// Region method: `el` or `lr`.
    #[arg(long, default_value = "el")]
    method: String,
    /// Also print one CSV row `method,statistic,threshold,covered,iterations,status`.
    #[arg(long)]
    row: bool,
}

#[derive(Args)]
struct MleArgs {
    #[arg(long, value_name = "FILE")]
    sample: PathBuf,
    #[command(flatten)]
    weights: WeightSourceArgs,
    /// Log-determinant backend: `lu`, `spectral` or `auto`.
    #[arg(long, default_value = "auto")]
    logdet: String,
    /// Write the concentrated log-likelihood grid as CSV.
    #[arg(long = "profile-out", value_name = "FILE")]
    profile_out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// Experiment file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output table (overrides the config; stdout if neither is set).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<TableFormat>,
    /// Worker cap (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    weights: WeightSourceArgs,
    /// `beta_1,...,beta_k,rho,sigma2`; `sigma2` may be omitted.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_value = "3.5,0.15"
    )]
    theta: Vec<f64>,
    #[arg(long, default_value = "normal")]
    dist: ErrorDistribution,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    intercept: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Summary CSV (stdout if omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// QQ pairs against the chi-squared reference, as CSV.
    #[arg(long = "qq-out", value_name = "FILE")]
    qq_out: Option<PathBuf>,
}

fn invocation_header() -> Vec<String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    vec![
        format!("spel {VERSION}"),
        format!("invocation: spel {}", args.join(" ")),
    ]
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Splits `beta..., rho, sigma2` (or `beta..., rho` when `sigma2` is optional).
fn split_theta(values: &[f64], sigma2_default: Option<f64>) -> Result<Theta> {
    let need = if sigma2_default.is_some() { 2 } else { 3 };
    if values.len() < need {
        return Err(Error::InvalidArgument(format!(
            "theta needs at least {need} comma-separated values, got {}",
            values.len()
        )));
    }
    let (beta, rho, sigma2) = match sigma2_default {
        Some(s) if values.len() == 2 => (&values[..1], values[1], s),
        _ => {
            let n = values.len();
            (&values[..n - 2], values[n - 2], values[n - 1])
        }
    };
    Theta::new(DVector::from_column_slice(beta), rho, sigma2)
}

fn run_weights(args: &WeightsArgs) -> Result<()> {
    let mut w = match (&args.grid, &args.input) {
        (Some(g), _) => weights::build_grid_queen(g[0], g[1])?,
        (None, Some(p)) => {
            let (w, warnings) = weights::load_weights(p, args.format)?;
            for warn in warnings {
                log::warn!("{}: {warn}", p.display());
            }
            w
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    if args.standardize {
        let (s, warnings) = weights::row_standardize(&w);
        for warn in warnings {
            log::warn!("{warn}");
        }
        w = s;
    }
    w = weights::kronecker_pool(args.pool, &w)?;

    let r = weights::validate_weights(&w);
    println!("n={}", r.n);
    println!("max_abs_row_sum={}", r.max_abs_row_sum);
    println!("max_abs_col_sum={}", r.max_abs_col_sum);
    println!("zero_rows={}", r.zero_rows);
    println!("symmetric={}", r.symmetric);
    println!("standardized={}", r.standardized);

    if let Some(out) = &args.out {
        let format = args.out_format.unwrap_or(args.format);
        let text = comment_block(&invocation_header()) + &weights::format_weights(&w, format);
        write_atomic(out, &text)?;
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let design = SemDesign::ramp(args.weights.resolve()?, args.intercept)?;
    let sigma2 = args.sigma2.unwrap_or_else(|| args.dist.raw_variance());
    let theta = Theta::new(DVector::from_vec(args.beta.clone()), args.rho, sigma2)?;
    let s = Simulator::new(&design, &theta, args.dist)?.draw(args.seed);
    let mut header = invocation_header();
    header.push(format!(
        "dist={} seed={} rho={} sigma2={} beta={}",
        args.dist,
        args.seed,
        args.rho,
        sigma2,
        join(theta.beta.as_slice())
    ));
    emit(args.out.as_deref(), &sample::format_sample(&header, design.x(), &s.y))
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn load_design(sample_path: &Path, weights: &WeightSourceArgs) -> Result<(SemDesign, DVector<f64>)> {
    let s = sample::load_sample(sample_path)?;
    let w = weights.resolve()?;
    Ok((SemDesign::new(s.x, w)?, s.y))
}

fn run_test(args: &TestArgs) -> Result<()> {
    let (design, y) = load_design(&args.sample, &args.weights)?;
    let theta0 = split_theta(&args.theta0, None)?;
    let threshold = chi2_quantile(design.df(), args.alpha)?;
    let (statistic, covered, iterations, status, lambda) = match args.method.as_str() {
        "el" => {
            let r = el::el_test(&design, &y, &theta0, args.alpha)?;
            let status = match r.el.lambda.status {
                LambdaStatus::Converged => "converged",
                LambdaStatus::HullInfeasible => "hull-infeasible",
                LambdaStatus::MaxIter => "max-iter",
            };
            (
                r.report.statistic,
                r.report.covered,
                r.el.lambda.iterations.to_string(),
                status,
                Some(r.el.lambda.lambda),
            )
        }
        other => {
            let method = MethodRegistry::builtin().get(other)?;
            let o = method.prepare(&design, &theta0)?.evaluate(&y);
            let status = match o.failure {
                None => "ok",
                Some(Failure::FitFailed) => "fit-failed",
                Some(Failure::HullInfeasible) => "hull-infeasible",
                Some(Failure::SolverMaxIter) => "max-iter",
            };
            (o.statistic, o.covered(threshold), String::new(), status, None)
        }
    };
    println!("method={}", args.method);
    println!("statistic={statistic}");
    println!("threshold={threshold}");
    println!("df={}", design.df());
    println!("covered={covered}");
    if let Some(l) = &lambda {
        println!("lambda={}", join(l.as_slice()));
        println!("iterations={iterations}");
    }
    println!("status={status}");
    if args.row {
        println!("method,statistic,threshold,covered,iterations,status");
        println!(
            "{},{statistic},{threshold},{covered},{iterations},{status}",
            args.method
        );
    }
    Ok(())
}

fn run_mle(args: &MleArgs) -> Result<()> {
    let (design, y) = load_design(&args.sample, &args.weights)?;
    let opts = MleOptions {
        logdet: args.logdet.clone(),
        ..MleOptions::default()
    };
    let ctx = MlContext::new(&design, &opts)?;
    let r = ctx.response(&y)?;
    let fit = ctx.fit(&r)?;
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    println!("beta={}", join(fit.theta_hat.beta.as_slice()));
    println!("rho={}", fit.theta_hat.rho);
    println!("sigma2={}", fit.theta_hat.sigma2);
    println!("loglik={}", fit.loglik);
    println!("logdet={}", ctx.logdet_name());
    if let Some(p) = &args.profile_out {
        let mut text = comment_block(&invocation_header());
        text.push_str("rho,concentrated_loglik\n");
        for (rho, v) in &fit.rho_profile {
            text.push_str(&format!("{rho},{v}\n"));
        }
        write_atomic(p, &text)?;
    }
    Ok(())
}

fn run_coverage(args: &CoverageArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.override_with(args.reps, args.seed, args.alpha, args.threads);
    let registry = MethodRegistry::builtin();
    let mut results = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        log::info!(
            "cell rho={} weights={} dist={} reps={}",
            cell.theta0.rho,
            cell.weights.label(),
            cell.dist,
            cell.reps
        );
        let r = montecarlo::run_coverage(cell, &registry)?;
        if r.el_max_iter > 0 {
            log::warn!("{} EL solves hit the iteration cap", r.el_max_iter);
        }
        results.push(r);
    }
    let output = config.output.clone();
    let format = args
        .format
        .or(output.as_ref().and_then(|o| o.format))
        .unwrap_or(TableFormat::Csv);
    let path = args.out.clone().or(output.and_then(|o| o.path));
    let first = &config.cells[0];
    let mut header = invocation_header();
    header.push(format!(
        "dist={} reps={} alpha={} seed={} sigma2={}",
        first.dist, first.reps, first.alpha, first.base_seed, first.theta0.sigma2
    ));
    emit(path.as_deref(), &montecarlo::emit_table(&results, format, &header))
}

fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    let theta = split_theta(&args.theta, Some(args.dist.raw_variance()))?;
    let spec = ExperimentSpec {
        weights: args.weights.spec(),
        intercept: args.intercept,
        theta0: theta,
        dist: args.dist,
        reps: args.reps,
        alpha: 0.95,
        base_seed: args.seed,
        methods: vec!["el".into()],
        threads: args.threads,
    };
    let probs = [0.5, 0.75, 0.9, 0.95, 0.99];
    let cal = montecarlo::run_calibration(&spec, &probs)?;

    let mut text = comment_block(&invocation_header());
    text.push_str("quantity,key,theoretical,empirical\n");
    let d = cal.df;
    for i in 0..d {
        for j in i..d {
            text.push_str(&format!(
                "sigma,{}-{},{},{}\n",
                i + 1,
                j + 1,
                cal.sigma_theory.full[(i, j)],
                cal.sigma_empirical[(i, j)]
            ));
        }
    }
    text.push_str(&format!("sigma_rel_frobenius,all,0,{}\n", cal.sigma_relative_error()));
    text.push_str(&format!("ks_distance,chi2_{d},0,{}\n", cal.ks_distance));
    for (p, z, f) in &cal.ecdf_at_quantiles {
        text.push_str(&format!("ecdf,{z},{p},{f}\n"));
    }
    emit(args.out.as_deref(), &text)?;

    if let Some(q) = &args.qq_out {
        let mut qq = comment_block(&invocation_header());
        qq.push_str("theoretical,empirical\n");
        for (t, e) in &cal.qq {
            qq.push_str(&format!("{t},{e}\n"));
        }
        write_atomic(q, &qq)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Weights(a) => run_weights(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Test(a) => run_test(a),
        Command::Mle(a) => run_mle(a),
        Command::Coverage(a) => run_coverage(a),
        Command::Calibrate(a) => run_calibrate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code == 1 {
                eprintln!("error=usage");
            }
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spel: {e}");
            eprintln!("error={}", e.kind());
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
