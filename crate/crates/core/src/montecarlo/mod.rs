//! Coverage and calibration experiments.
//!
//! Replication `r` (1-based) draws its innovations from seed
//! `base_seed + r`, so any subset of replications can be rerun on its own
//! and the result never depends on how work is split across threads.
//! Replications where EL is hull-infeasible or the MLE fails count as not
//! covered.

pub mod config;
pub mod table;

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::el::{chi2_cdf, chi2_quantile, ElContext, SolverOptions};
use crate::error::{Error, Result};
use crate::methods::{Failure, MethodRegistry};
use crate::moments::{dist_moments, sigma_matrix, SigmaBlocks};
use crate::sem::{ErrorDistribution, SemDesign, Simulator, Theta};
use crate::stats;
use crate::weights::{self, WeightFormat, WeightMatrix};

pub use config::ExperimentConfig;
pub use table::{emit_table, write_table, TableFormat};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    Grid { rows: usize, cols: usize },
    File { path: PathBuf, format: WeightFormat },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsSpec {
    pub source: WeightSource,
    pub pool: usize,
    pub standardize: bool,
    pub label: Option<String>,
}

impl WeightsSpec {
    pub fn grid(rows: usize, cols: usize) -> Self {
        WeightsSpec {
            source: WeightSource::Grid { rows, cols },
            pool: 1,
            standardize: true,
            label: None,
        }
    }

    pub fn pooled(mut self, blocks: usize) -> Self {
        self.pool = blocks;
        self
    }

    pub fn resolve(&self) -> Result<WeightMatrix> {
        let base = match &self.source {
            WeightSource::Grid { rows, cols } => weights::build_grid_queen(*rows, *cols)?,
            WeightSource::File { path, format } => {
                let (w, warnings) = weights::load_weights(path, *format)?;
                for warn in warnings {
                    log::warn!("{}: {warn}", path.display());
                }
                w
            }
        };
        let base = if self.standardize {
            let (w, warnings) = weights::row_standardize(&base);
            for warn in warnings {
                log::warn!("{warn}");
            }
            w
        } else {
            base
        };
        weights::kronecker_pool(self.pool, &base)
    }

    /// Table label: explicit label, else `grid49`, `I5xgrid49`, or the file stem.
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let base = match &self.source {
            WeightSource::Grid { rows, cols } => format!("grid{}", rows * cols),
            WeightSource::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "weights".into()),
        };
        if self.pool > 1 {
            format!("I{}x{base}", self.pool)
        } else {
            base
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub weights: WeightsSpec,
    /// Adds an intercept column in front of the `i/(n+1)` regressor.
    pub intercept: bool,
    pub theta0: Theta,
    pub dist: ErrorDistribution,
    pub reps: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub methods: Vec<String>,
    /// Worker cap; `None` uses all available parallelism.
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    /// `β = 3.5`, `x_i = i/(n+1)`, `σ²` equal to the raw variance of `dist`.
    pub fn standard(weights: WeightsSpec, rho: f64, dist: ErrorDistribution, reps: usize, base_seed: u64) -> Self {
        ExperimentSpec {
            weights,
            intercept: false,
            theta0: Theta {
                beta: DVector::from_element(1, 3.5),
                rho,
                sigma2: dist.raw_variance(),
            },
            dist,
            reps,
            alpha: 0.95,
            base_seed,
            methods: vec!["el".into(), "lr".into()],
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        self.theta0.validate()
    }

    pub fn design(&self) -> Result<SemDesign> {
        SemDesign::ramp(self.weights.resolve()?, self.intercept)
    }

    pub fn seed_for(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            b = b.num_threads(t);
        }
        b.build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCoverage {
    pub name: String,
    pub label: String,
    pub covered: usize,
    pub reps: usize,
}

impl MethodCoverage {
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.reps as f64
    }

    /// Binomial standard error `√(p(1−p)/reps)`.
    pub fn std_error(&self) -> f64 {
        let p = self.coverage();
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub weights_label: String,
    pub n: usize,
    pub rho: f64,
    pub dist: ErrorDistribution,
    pub alpha: f64,
    pub threshold: f64,
    pub reps: usize,
    pub methods: Vec<MethodCoverage>,
    pub el_infeasible: usize,
    pub el_max_iter: usize,
    pub mle_failures: usize,
}

impl CoverageResult {
    pub fn method(&self, name: &str) -> Option<&MethodCoverage> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn coverage(&self, name: &str) -> Option<f64> {
        self.method(name).map(MethodCoverage::coverage)
    }
}

pub fn run_coverage(spec: &ExperimentSpec, registry: &MethodRegistry) -> Result<CoverageResult> {
    spec.validate()?;
    let design = spec.design()?;
    let df = design.df();
    let threshold = chi2_quantile(df, spec.alpha)?;
    let simulator = Simulator::new(&design, &spec.theta0, spec.dist)?;

    let methods = spec
        .methods
        .iter()
        .map(|name| registry.get(name))
        .collect::<Result<Vec<_>>>()?;
    let prepared = methods
        .iter()
        .map(|m| m.prepare(&design, &spec.theta0))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Vec<_>> = spec.pool()?.install(|| {
        (1..=spec.reps)
            .into_par_iter()
            .map(|r| {
                let sample = simulator.draw(spec.seed_for(r));
                prepared.iter().map(|p| p.evaluate(&sample.y)).collect()
            })
            .collect()
    });

    let mut result = CoverageResult {
        weights_label: spec.weights.label(),
        n: design.n(),
        rho: spec.theta0.rho,
        dist: spec.dist,
        alpha: spec.alpha,
        threshold,
        reps: spec.reps,
        methods: methods
            .iter()
            .map(|m| MethodCoverage {
                name: m.name().to_string(),
                label: m.label().to_string(),
                covered: 0,
                reps: spec.reps,
            })
            .collect(),
        el_infeasible: 0,
        el_max_iter: 0,
        mle_failures: 0,
    };
    for rep in &outcomes {
        for (slot, o) in result.methods.iter_mut().zip(rep) {
            if o.covered(threshold) {
                slot.covered += 1;
            }
            match o.failure {
                Some(Failure::HullInfeasible) => result.el_infeasible += 1,
                Some(Failure::SolverMaxIter) => result.el_max_iter += 1,
                Some(Failure::FitFailed) => result.mle_failures += 1,
                None => {}
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub df: usize,
    pub n: usize,
    pub reps: usize,
    /// `ℓ_n(θ₀)` per replication, in replication order (`+∞` if infeasible).
    pub statistics: Vec<f64>,
    pub ks_distance: f64,
    /// `(p, z_p, F_n(z_p))` over the requested probability grid.
    pub ecdf_at_quantiles: Vec<(f64, f64, f64)>,
    /// `(χ² quantile, empirical quantile)` pairs at `(i − 0.5)/reps`.
    pub qq: Vec<(f64, f64)>,
    pub sigma_theory: SigmaBlocks,
    /// Empirical covariance of `Σ_i ω_i(θ₀)` around its known zero mean.
    pub sigma_empirical: DMatrix<f64>,
    /// Each row is `Σ^{-1/2} Σ_i ω_i(θ₀)` for one replication.
    pub standardized_sums: DMatrix<f64>,
}

impl CalibrationReport {
    /// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`.
    pub fn sigma_relative_error(&self) -> f64 {
        (&self.sigma_empirical - &self.sigma_theory.full).norm() / self.sigma_theory.full.norm()
    }

    /// Empirical `P(ℓ_n ≤ z)`.
    pub fn ecdf(&self, z: f64) -> f64 {
        stats::ecdf(&self.statistics, z)
    }
}

/// Distribution of `ℓ_n(θ₀)` against `χ²_{k+2}`, and of `Σ ω_i(θ₀)` against
/// its exact covariance. `spec.alpha` and `spec.methods` are ignored.
pub fn run_calibration(spec: &ExperimentSpec, probabilities: &[f64]) -> Result<CalibrationReport> {
    if spec.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    spec.theta0.validate()?;
    let design = spec.design()?;
    let df = design.df();
    let simulator = Simulator::new(&design, &spec.theta0, spec.dist)?;
    let ctx = ElContext::new(&design, &spec.theta0)?;
    let opts = SolverOptions::default();

    let rows: Vec<(f64, DVector<f64>)> = spec.pool()?.install(|| {
        (1..=spec.reps)
            .into_par_iter()
            .map(|r| {
                let sample = simulator.draw(spec.seed_for(r));
                let om = ctx.omega(&sample.y);
                let sums = om.column_sums();
                let stat = crate::el::el_statistic(&om, &opts)
                    .map(|e| e.statistic)
                    .unwrap_or(f64::INFINITY);
                (stat, sums)
            })
            .collect()
    });

    let statistics: Vec<f64> = rows.iter().map(|(s, _)| *s).collect();
    let ks_distance = stats::ks_distance(&statistics, |x| chi2_cdf(df, x));
    let ecdf_at_quantiles = probabilities
        .iter()
        .map(|&p| {
            let z = chi2_quantile(df, p)?;
            Ok((p, z, stats::ecdf(&statistics, z)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = statistics.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok((chi2_quantile(df, (i as f64 + 0.5) / m as f64)?, s)))
        .collect::<Result<Vec<_>>>()?;

    let moments = dist_moments(spec.dist, spec.theta0.sigma2)?;
    let sigma_theory = sigma_matrix(&design, ctx.a_rho(), ctx.gtilde(), &moments)?;
    let mut sigma_empirical = DMatrix::zeros(df, df);
    for (_, s) in &rows {
        sigma_empirical += s * s.transpose();
    }
    sigma_empirical /= m as f64;
    let whiten = crate::linalg::sym_inv_sqrt(&sigma_theory.full);
    let mut standardized_sums = DMatrix::zeros(m, df);
    for (i, (_, s)) in rows.iter().enumerate() {
        standardized_sums.row_mut(i).copy_from(&(&whiten * s).transpose());
    }

    Ok(CalibrationReport {
        df,
        n: design.n(),
        reps: spec.reps,
        statistics,
        ks_distance,
        ecdf_at_quantiles,
        qq,
        sigma_theory,
        sigma_empirical,
        standardized_sums,
    })
}
