//! Empirical likelihood inference for linear regression with spatial
//! autoregressive disturbances.
//!
//! The model is `y = Xβ + u`, `u = ρWu + ε`, with `ε` i.i.d. mean zero and
//! variance `σ²`. For a candidate `θ = (β, ρ, σ²)` the crate builds one
//! estimating-function vector `ω_i(θ)` per spatial unit, turning the
//! quadratic score in `ρ` into a martingale difference array, and profiles
//! the empirical likelihood over those vectors. The resulting statistic is
//! calibrated against `χ²_{k+2}`.
//!
//! A Gaussian likelihood-ratio region is provided as a baseline, and a
//! Monte Carlo harness measures the coverage of both regions.
//!
//! Module map:
//! - [`weights`]: spatial weight matrices (queen grids, standardization, I/O).
//! - [`sem`]: the model itself, simulation, residuals, `A(ρ)` and `G̃`.
//! - [`el`]: estimating functions, the dual multiplier solver, the EL test.
//! - [`moments`]: exact covariance oracles for the estimating functions.
//! - [`gaussian_ml`]: Gaussian log-likelihood, profile MLE, LR test.
//! - [`methods`]: named registry of confidence-region methods.
//! - [`montecarlo`]: coverage and calibration experiments, table output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod el;
pub mod error;
pub mod gaussian_ml;
pub mod io;
pub mod linalg;
pub mod methods;
pub mod moments;
pub mod montecarlo;
pub mod sem;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use sem::{ErrorDistribution, SemDesign, Theta};
pub use weights::WeightMatrix;
