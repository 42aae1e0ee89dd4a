//! Gaussian likelihood for the spatial error model and the likelihood-ratio
//! baseline.
//!
//! The MLE concentrates out `β` and `σ²`: for fixed `ρ`, `β̂(ρ)` is least
//! squares on `A(ρ)y ≈ A(ρ)Xβ` and `σ̂²(ρ)` the mean squared residual, which
//! leaves a one-dimensional objective
//!
//! ```text
//! L_c(ρ) = −(n/2)(log 2π + 1) − (n/2) log σ̂²(ρ) + log|A(ρ)|
//! ```
//!
//! maximized by a coarse grid followed by golden-section refinement.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::el::{chi2_quantile, TestReport};
use crate::error::{Error, Result};
use crate::linalg::{self, LogDetStrategy, LuFactor};
use crate::sem::{self, SemDesign, Theta};

/// Negative LR values above this are optimizer noise and clamp to zero.
pub const LR_CLAMP: f64 = -1e-6;

#[derive(Debug, Clone)]
pub struct MleOptions {
    /// Log-determinant backend: `lu`, `spectral` or `auto`.
    pub logdet: String,
    pub grid_step: f64,
    /// Search interval is `(−rho_bound, rho_bound)`.
    pub rho_bound: f64,
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            logdet: "auto".into(),
            grid_step: 0.01,
            rho_bound: 0.999,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlFit {
    pub theta_hat: Theta,
    pub loglik: f64,
    /// Concentrated log-likelihood on the coarse grid.
    pub rho_profile: Vec<(f64, f64)>,
    pub converged: bool,
}

/// Exact Gaussian log-likelihood with `log|A(ρ)|` from an LU factorization.
pub fn log_likelihood(design: &SemDesign, y: &DVector<f64>, theta: &Theta) -> Result<f64> {
    theta.validate()?;
    let eps = sem::residuals(design, y, theta)?;
    let a = sem::build_a(design.w(), theta.rho)?;
    let (logdet, sign) = LuFactor::new(a)?.log_abs_det();
    if sign <= 0.0 {
        return Err(Error::NonPositiveDeterminant { sign });
    }
    Ok(gaussian_loglik(design.n(), theta.sigma2, logdet, eps.norm_squared()))
}

fn gaussian_loglik(n: usize, sigma2: f64, logdet: f64, ssr: f64) -> f64 {
    let nf = n as f64;
    -0.5 * nf * (2.0 * PI).ln() - 0.5 * nf * sigma2.ln() + logdet - ssr / (2.0 * sigma2)
}

/// Response-independent pieces of the likelihood for one design: the
/// log-determinant backend and `WX`. Shared across replications.
pub struct MlContext<'a> {
    design: &'a SemDesign,
    logdet: Box<dyn LogDetStrategy>,
    wx: DMatrix<f64>,
    opts: MleOptions,
}

/// `y` together with `Wy`, so `A(ρ)y = y − ρWy` costs `O(n)` per `ρ`.
pub struct Response<'y> {
    y: &'y DVector<f64>,
    wy: DVector<f64>,
}

impl<'a> MlContext<'a> {
    pub fn new(design: &'a SemDesign, opts: &MleOptions) -> Result<Self> {
        if !(opts.rho_bound > 0.0 && opts.rho_bound < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho bound must lie in (0, 1), got {}",
                opts.rho_bound
            )));
        }
        if !(opts.grid_step > 0.0 && opts.grid_step < opts.rho_bound) {
            return Err(Error::InvalidArgument(format!("bad grid step {}", opts.grid_step)));
        }
        Ok(MlContext {
            design,
            logdet: linalg::logdet_by_name(&opts.logdet, design.w())?,
            wx: design.w().values() * design.x(),
            opts: opts.clone(),
        })
    }

    pub fn logdet_name(&self) -> &'static str {
        self.logdet.name()
    }

    pub fn response<'y>(&self, y: &'y DVector<f64>) -> Result<Response<'y>> {
        if y.len() != self.design.n() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, design has {} rows",
                y.len(),
                self.design.n()
            )));
        }
        Ok(Response {
            y,
            wy: self.design.w().values() * y,
        })
    }

    /// Log-likelihood at `θ` using this context's log-determinant backend.
    pub fn log_likelihood(&self, r: &Response<'_>, theta: &Theta) -> Result<f64> {
        theta.validate()?;
        if theta.beta.len() != self.design.k() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, design has {} columns",
                theta.beta.len(),
                self.design.k()
            )));
        }
        let u = r.y - self.design.x() * &theta.beta;
        let wu = &r.wy - &self.wx * &theta.beta;
        let eps = u - wu * theta.rho;
        let logdet = self.logdet.log_det(theta.rho)?;
        Ok(gaussian_loglik(
            self.design.n(),
            theta.sigma2,
            logdet,
            eps.norm_squared(),
        ))
    }

    fn transformed(&self, r: &Response<'_>, rho: f64) -> (DVector<f64>, DMatrix<f64>) {
        (r.y - &r.wy * rho, self.design.x() - &self.wx * rho)
    }

    /// `β̂(ρ)` and `σ̂²(ρ)`.
    pub fn profile_at(&self, r: &Response<'_>, rho: f64) -> Result<(DVector<f64>, f64)> {
        let (ys, xs) = self.transformed(r, rho);
        let svd = xs.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        let beta = svd
            .solve(&ys, tol)
            .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
        let resid = ys - xs * &beta;
        Ok((beta, resid.norm_squared() / self.design.n() as f64))
    }

    /// Concentrated log-likelihood `L_c(ρ)`; `None` when undefined.
    fn concentrated(&self, r: &Response<'_>, rho: f64) -> Option<f64> {
        let (_, s2) = self.profile_at(r, rho).ok()?;
        if !(s2 > 0.0) {
            return None;
        }
        let logdet = self.logdet.log_det(rho).ok()?;
        let n = self.design.n() as f64;
        Some(-0.5 * n * ((2.0 * PI).ln() + 1.0) - 0.5 * n * s2.ln() + logdet)
    }

    pub fn fit(&self, r: &Response<'_>) -> Result<MlFit> {
        let bound = self.opts.rho_bound;
        let step = self.opts.grid_step;
        let half = (bound / step).floor() as i64;
        let grid: Vec<f64> = (-half..=half)
            .map(|i| i as f64 * step)
            .filter(|v| v.abs() < bound)
            .collect();

        let scale = r.y.norm_squared() / self.design.n() as f64;
        let degenerate_floor = 1e-24 * scale.max(f64::MIN_POSITIVE);

        let mut profile = Vec::with_capacity(grid.len());
        let mut best: Option<(usize, f64)> = None;
        let mut degenerate = false;
        for (idx, &rho) in grid.iter().enumerate() {
            match self.profile_at(r, rho) {
                Ok((_, s2)) if s2 <= degenerate_floor => degenerate = true,
                _ => {}
            }
            if let Some(v) = self.concentrated(r, rho) {
                profile.push((rho, v));
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((idx, v));
                }
            }
        }

        let Some((m, _)) = best.filter(|_| !degenerate) else {
            let (beta, s2) = self.profile_at(r, 0.0)?;
            return Ok(MlFit {
                theta_hat: Theta {
                    beta,
                    rho: 0.0,
                    sigma2: s2.max(f64::MIN_POSITIVE),
                },
                loglik: f64::INFINITY,
                rho_profile: profile,
                converged: false,
            });
        };

        let lo = if m == 0 { -bound } else { grid[m - 1] };
        let hi = if m + 1 == grid.len() { bound } else { grid[m + 1] };
        let objective = |rho: f64| self.concentrated(r, rho).unwrap_or(f64::NEG_INFINITY);
        let mut rho_hat = golden_max(objective, lo, hi, self.opts.tol);
        if objective(rho_hat) < objective(grid[m]) {
            rho_hat = grid[m];
        }

        let (beta, s2) = self.profile_at(r, rho_hat)?;
        let theta_hat = Theta {
            beta,
            rho: rho_hat,
            sigma2: s2,
        };
        let loglik = self.log_likelihood(r, &theta_hat)?;
        Ok(MlFit {
            theta_hat,
            loglik,
            rho_profile: profile,
            converged: true,
        })
    }

    /// `2(L(θ̂) − L(θ₀))`, clamped at zero for tiny negative values.
    pub fn lr_statistic(&self, r: &Response<'_>, theta0: &Theta) -> Result<(f64, MlFit)> {
        let fit = self.fit(r)?;
        if !fit.converged {
            return Err(Error::NotConverged);
        }
        let l0 = self.log_likelihood(r, theta0)?;
        let lr = 2.0 * (fit.loglik - l0);
        if lr < LR_CLAMP {
            return Err(Error::InconsistentFit(lr));
        }
        Ok((lr.max(0.0), fit))
    }
}

/// Maximizes a unimodal `f` on `[a, b]` to interval width `tol`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

pub fn mle(design: &SemDesign, y: &DVector<f64>, opts: &MleOptions) -> Result<MlFit> {
    let ctx = MlContext::new(design, opts)?;
    let r = ctx.response(y)?;
    ctx.fit(&r)
}

pub fn lr_statistic(design: &SemDesign, y: &DVector<f64>, theta0: &Theta) -> Result<f64> {
    let ctx = MlContext::new(design, &MleOptions::default())?;
    let r = ctx.response(y)?;
    Ok(ctx.lr_statistic(&r, theta0)?.0)
}

pub fn lr_test(design: &SemDesign, y: &DVector<f64>, theta0: &Theta, alpha: f64) -> Result<TestReport> {
    let threshold = chi2_quantile(design.df(), alpha)?;
    let statistic = lr_statistic(design, y, theta0)?;
    Ok(TestReport {
        statistic,
        threshold,
        covered: statistic <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{simulate, ErrorDistribution};
    use crate::weights::{build_grid_queen, row_standardize, WeightMatrix};

    fn design(r: usize, c: usize) -> SemDesign {
        SemDesign::ramp(row_standardize(&build_grid_queen(r, c).unwrap()).0, false).unwrap()
    }

    fn theta(beta: f64, rho: f64, s2: f64) -> Theta {
        Theta::new(DVector::from_element(1, beta), rho, s2).unwrap()
    }

    #[test]
    fn loglik_at_zero_residuals() {
        let d = design(4, 4);
        let t = theta(2.0, 0.0, 1.0);
        let y = d.x() * &t.beta;
        let l = log_likelihood(&d, &y, &t).unwrap();
        assert!((l + 8.0 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_two_by_two_logdet() {
        // x = (1, 2, 3, 4), W pairs units (1,2) and (3,4); |A| = (1 − ρ²)²
        let w = crate::weights::kronecker_pool(2, &build_grid_queen(1, 2).unwrap()).unwrap();
        let d = SemDesign::new(DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]), w).unwrap();
        let t = theta(1.0, 0.5, 1.0);
        let y = d.x() * &t.beta;
        let l = log_likelihood(&d, &y, &t).unwrap();
        let expect = -2.0 * (2.0 * PI).ln() + 2.0 * 0.75f64.ln();
        assert!((l - expect).abs() < 1e-12);

        let pair = build_grid_queen(1, 2).unwrap();
        let lu = crate::linalg::LuLogDet::new(&pair);
        assert!((lu.log_det(0.5).unwrap() - 0.75f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn fit_maximizes_and_matches_full_likelihood() {
        let d = design(9, 9);
        let t0 = theta(3.5, 0.4, 1.0);
        let s = simulate(&d, &t0, ErrorDistribution::StandardNormal, 3).unwrap();
        let fit = mle(&d, &s.y, &MleOptions::default()).unwrap();
        assert!(fit.converged);
        let exact = log_likelihood(&d, &s.y, &fit.theta_hat).unwrap();
        assert!((exact - fit.loglik).abs() < 1e-8);
        // concentrated and full agree at the optimum
        let ctx = MlContext::new(&d, &MleOptions::default()).unwrap();
        let r = ctx.response(&s.y).unwrap();
        let lc = ctx.concentrated(&r, fit.theta_hat.rho).unwrap();
        assert!((lc - fit.loglik).abs() < 1e-8);
        for probe in [
            t0.clone(),
            theta(fit.theta_hat.beta[0] + 0.01, fit.theta_hat.rho, fit.theta_hat.sigma2),
            theta(fit.theta_hat.beta[0], fit.theta_hat.rho - 0.01, fit.theta_hat.sigma2),
            theta(fit.theta_hat.beta[0], fit.theta_hat.rho, fit.theta_hat.sigma2 * 1.01),
        ] {
            assert!(log_likelihood(&d, &s.y, &probe).unwrap() <= fit.loglik + 1e-6);
        }
    }

    #[test]
    fn profiled_beta_solves_normal_equations() {
        let d = design(6, 7);
        let t0 = theta(3.5, -0.3, 2.0);
        let s = simulate(&d, &t0, ErrorDistribution::CenteredChiSquared4, 9).unwrap();
        let ctx = MlContext::new(&d, &MleOptions::default()).unwrap();
        let r = ctx.response(&s.y).unwrap();
        for rho in [-0.9, -0.2, 0.0, 0.5, 0.95] {
            let (beta, _) = ctx.profile_at(&r, rho).unwrap();
            let (ys, xs) = ctx.transformed(&r, rho);
            let ne = xs.transpose() * (&ys - &xs * &beta);
            let scale = (xs.transpose() * &ys).norm();
            assert!(ne.norm() <= 1e-8 * scale);
        }
    }

    #[test]
    fn backends_agree() {
        let d = design(7, 7);
        let s = simulate(&d, &theta(3.5, 0.15, 1.0), ErrorDistribution::StandardNormal, 1).unwrap();
        let lu = MleOptions {
            logdet: "lu".into(),
            ..MleOptions::default()
        };
        let a = mle(&d, &s.y, &lu).unwrap();
        let b = mle(&d, &s.y, &MleOptions::default()).unwrap();
        assert!((a.theta_hat.rho - b.theta_hat.rho).abs() < 1e-6);
        assert!((a.loglik - b.loglik).abs() < 1e-8);
    }

    #[test]
    fn degenerate_data_not_converged() {
        let d = design(5, 5);
        let t = theta(3.5, 0.2, 1.0);
        let y = d.x() * &t.beta;
        let fit = mle(&d, &y, &MleOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.theta_hat.sigma2 > 0.0);
        assert!(matches!(lr_statistic(&d, &y, &t), Err(Error::NotConverged)));
    }

    #[test]
    fn lr_zero_at_estimate() {
        let d = design(7, 7);
        let s = simulate(&d, &theta(3.5, -0.85, 1.0), ErrorDistribution::StandardNormal, 2).unwrap();
        let fit = mle(&d, &s.y, &MleOptions::default()).unwrap();
        assert_eq!(lr_statistic(&d, &s.y, &fit.theta_hat).unwrap(), 0.0);
        let rep = lr_test(&d, &s.y, &fit.theta_hat, 0.01).unwrap();
        assert!(rep.covered);
    }

    #[test]
    fn lr_monotone_in_level() {
        let d = design(7, 7);
        let t0 = theta(3.5, 0.15, 1.0);
        for seed in 0..10 {
            let s = simulate(&d, &t0, ErrorDistribution::StudentT5, seed).unwrap();
            let lo = lr_test(&d, &s.y, &t0, 0.5).unwrap();
            let hi = lr_test(&d, &s.y, &t0, 0.99).unwrap();
            assert_eq!(lo.statistic, hi.statistic);
            assert!(!lo.covered || hi.covered);
        }
    }

    #[test]
    fn rho_zero_data_estimates_near_zero() {
        let d = design(13, 13);
        let t0 = theta(3.5, 0.0, 1.0);
        let ctx = MlContext::new(&d, &MleOptions::default()).unwrap();
        let reps = 60;
        let rhos: Vec<f64> = (0..reps)
            .map(|s| {
                let y = simulate(&d, &t0, ErrorDistribution::StandardNormal, s).unwrap().y;
                ctx.fit(&ctx.response(&y).unwrap()).unwrap().theta_hat.rho
            })
            .collect();
        let mean = rhos.iter().sum::<f64>() / reps as f64;
        let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * sd / (reps as f64).sqrt() + 0.03,
            "mean {mean} sd {sd}"
        );
    }

    #[test]
    fn nonsymmetrizable_weights_fall_back_to_lu() {
        let mut v = DMatrix::zeros(6, 6);
        for i in 0..6 {
            v[(i, (i + 1) % 6)] = 1.0;
        }
        let w = WeightMatrix::from_dense(v).unwrap();
        let d = SemDesign::ramp(w, false).unwrap();
        let ctx = MlContext::new(&d, &MleOptions::default()).unwrap();
        assert_eq!(ctx.logdet_name(), "lu");
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_max(|x| -(x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
    }
}
