//! Confidence-region methods behind a common trait, looked up by name.
//!
//! A [`RegionMethod`] turns a design and a hypothesized `θ₀` into a
//! [`PreparedMethod`] that maps a response vector to a test statistic. The
//! preparation step holds everything that does not depend on `y`, so Monte
//! Carlo drivers prepare once and evaluate per replication.
//!
//! Built-in methods: `el` (empirical likelihood) and `lr` (Gaussian
//! likelihood ratio). Both statistics are referred to `χ²_{k+2}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::el::{ElContext, LambdaStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::gaussian_ml::{MlContext, MleOptions};
use crate::sem::{SemDesign, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// EL: zero outside the convex hull of the estimating functions.
    HullInfeasible,
    /// EL: dual solver hit its iteration cap; the statistic is from the best
    /// iterate.
    SolverMaxIter,
    /// LR: the maximum likelihood fit failed.
    FitFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutcome {
    /// `+∞` whenever the point is rejected at every level.
    pub statistic: f64,
    pub failure: Option<Failure>,
}

impl MethodOutcome {
    pub fn covered(&self, threshold: f64) -> bool {
        !matches!(self.failure, Some(Failure::HullInfeasible | Failure::FitFailed)) && self.statistic <= threshold
    }
}

pub trait PreparedMethod: Send + Sync {
    fn evaluate(&self, y: &DVector<f64>) -> MethodOutcome;
}

pub trait RegionMethod: Send + Sync {
    /// Registry key.
    fn name(&self) -> &'static str;

    /// Column label in coverage tables.
    fn label(&self) -> &'static str;

    fn prepare<'a>(&self, design: &'a SemDesign, theta0: &Theta) -> Result<Box<dyn PreparedMethod + 'a>>;
}

pub struct ElMethod {
    pub opts: SolverOptions,
}

struct PreparedEl {
    ctx: ElContext,
    opts: SolverOptions,
}

impl PreparedMethod for PreparedEl {
    fn evaluate(&self, y: &DVector<f64>) -> MethodOutcome {
        match self.ctx.evaluate(y, &self.opts) {
            Ok(r) => MethodOutcome {
                statistic: r.statistic,
                failure: match r.lambda.status {
                    LambdaStatus::Converged => None,
                    LambdaStatus::HullInfeasible => Some(Failure::HullInfeasible),
                    LambdaStatus::MaxIter => Some(Failure::SolverMaxIter),
                },
            },
            Err(_) => MethodOutcome {
                statistic: f64::INFINITY,
                failure: Some(Failure::HullInfeasible),
            },
        }
    }
}

impl RegionMethod for ElMethod {
    fn name(&self) -> &'static str {
        "el"
    }

    fn label(&self) -> &'static str {
        "EL"
    }

    fn prepare<'a>(&self, design: &'a SemDesign, theta0: &Theta) -> Result<Box<dyn PreparedMethod + 'a>> {
        Ok(Box::new(PreparedEl {
            ctx: ElContext::new(design, theta0)?,
            opts: self.opts,
        }))
    }
}

pub struct LrMethod {
    pub opts: MleOptions,
}

struct PreparedLr<'a> {
    ctx: MlContext<'a>,
    theta0: Theta,
}

impl PreparedMethod for PreparedLr<'_> {
    fn evaluate(&self, y: &DVector<f64>) -> MethodOutcome {
        let r = self
            .ctx
            .response(y)
            .and_then(|r| self.ctx.lr_statistic(&r, &self.theta0));
        match r {
            Ok((lr, _)) => MethodOutcome {
                statistic: lr,
                failure: None,
            },
            Err(e) => {
                log::debug!("LR replication failed: {e}");
                MethodOutcome {
                    statistic: f64::INFINITY,
                    failure: Some(Failure::FitFailed),
                }
            }
        }
    }
}

impl RegionMethod for LrMethod {
    fn name(&self) -> &'static str {
        "lr"
    }

    fn label(&self) -> &'static str {
        "LR"
    }

    fn prepare<'a>(&self, design: &'a SemDesign, theta0: &Theta) -> Result<Box<dyn PreparedMethod + 'a>> {
        theta0.validate()?;
        Ok(Box::new(PreparedLr {
            ctx: MlContext::new(design, &self.opts)?,
            theta0: theta0.clone(),
        }))
    }
}

#[derive(Clone, Default)]
pub struct MethodRegistry {
    entries: BTreeMap<&'static str, Arc<dyn RegionMethod>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `el` and `lr` with default options.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(ElMethod {
            opts: SolverOptions::default(),
        }));
        r.register(Arc::new(LrMethod {
            opts: MleOptions::default(),
        }));
        r
    }

    /// Adds or replaces the method under its own name.
    pub fn register(&mut self, method: Arc<dyn RegionMethod>) {
        self.entries.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn RegionMethod>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown method `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
