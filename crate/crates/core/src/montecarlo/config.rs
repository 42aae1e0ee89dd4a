//! TOML experiment files.
//!
//! ```toml
//! dist = "t5"
//! reps = 2000
//! alpha = 0.95
//! seed = 20240611
//! methods = ["el", "lr"]
//!
//! [theta0]
//! beta = [3.5]
//! rho = [-0.85, -0.15, 0.15, 0.85]
//! # sigma2 defaults to the raw variance of `dist`
//!
//! [[weights]]
//! grid = [7, 7]
//!
//! [[weights]]
//! file = "columbus.csv"
//! format = "dense-csv"
//! pool = 5
//!
//! [output]
//! path = "coverage.csv"
//! format = "csv"
//! ```
//!
//! One cell runs for every `(rho, weights)` pair, ordered by `rho` first.
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use super::{ExperimentSpec, TableFormat, WeightSource, WeightsSpec};
use crate::error::{Error, Result};
use crate::sem::{ErrorDistribution, Theta};
use crate::weights::WeightFormat;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_pool() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsEntry {
    grid: Option<(usize, usize)>,
    file: Option<PathBuf>,
    format: Option<WeightFormat>,
    #[serde(default = "default_pool")]
    pool: usize,
    #[serde(default = "default_true")]
    standardize: bool,
    label: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaEntry {
    beta: Vec<f64>,
    rho: OneOrMany<f64>,
    sigma2: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    pub path: Option<PathBuf>,
    pub format: Option<TableFormat>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dist: ErrorDistribution,
    reps: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    seed: u64,
    #[serde(default = "default_methods")]
    methods: Vec<String>,
    #[serde(default)]
    intercept: bool,
    threads: Option<usize>,
    theta0: ThetaEntry,
    weights: OneOrMany<WeightsEntry>,
    output: Option<OutputEntry>,
}

fn default_alpha() -> f64 {
    0.95
}

fn default_methods() -> Vec<String> {
    vec!["el".into(), "lr".into()]
}

/// A parsed experiment file: shared settings plus the list of cells.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub cells: Vec<ExperimentSpec>,
    pub output: Option<OutputEntry>,
    /// Original file text, kept for provenance headers.
    pub source: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sigma2 = raw.theta0.sigma2.unwrap_or_else(|| raw.dist.raw_variance());
        let weights = raw
            .weights
            .to_vec()
            .into_iter()
            .map(|w| weights_spec(w, base_dir))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for rho in raw.theta0.rho.to_vec() {
            for w in &weights {
                let spec = ExperimentSpec {
                    weights: w.clone(),
                    intercept: raw.intercept,
                    theta0: Theta {
                        beta: DVector::from_vec(raw.theta0.beta.clone()),
                        rho,
                        sigma2,
                    },
                    dist: raw.dist,
                    reps: raw.reps,
                    alpha: raw.alpha,
                    base_seed: raw.seed,
                    methods: raw.methods.clone(),
                    threads: raw.threads,
                };
                spec.validate()
                    .map_err(|e| Error::Config(format!("cell rho={rho}, weights={}: {e}", w.label())))?;
                cells.push(spec);
            }
        }
        if cells.is_empty() {
            return Err(Error::Config("no experiment cells (empty rho or weights list)".into()));
        }
        let output = raw.output.map(|mut o| {
            o.path = o.path.map(|p| base_dir.join(p));
            o
        });
        Ok(ExperimentConfig {
            cells,
            output,
            source: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, dir)
    }

    /// Applies command-line overrides to every cell.
    pub fn override_with(
        &mut self,
        reps: Option<usize>,
        seed: Option<u64>,
        alpha: Option<f64>,
        threads: Option<usize>,
    ) {
        for c in &mut self.cells {
            if let Some(r) = reps {
                c.reps = r;
            }
            if let Some(s) = seed {
                c.base_seed = s;
            }
            if let Some(a) = alpha {
                c.alpha = a;
            }
            if threads.is_some() {
                c.threads = threads;
            }
        }
    }
}

fn weights_spec(w: WeightsEntry, base_dir: &Path) -> Result<WeightsSpec> {
    let source = match (w.grid, w.file) {
        (Some((rows, cols)), None) => WeightSource::Grid { rows, cols },
        (None, Some(file)) => WeightSource::File {
            path: base_dir.join(file),
            format: w.format.unwrap_or(WeightFormat::DenseCsv),
        },
        _ => {
            return Err(Error::Config(
                "each weights entry needs exactly one of `grid` or `file`".into(),
            ))
        }
    };
    if w.pool == 0 {
        return Err(Error::Config("weights pool must be at least 1".into()));
    }
    Ok(WeightsSpec {
        source,
        pool: w.pool,
        standardize: w.standardize,
        label: w.label,
    })
}
