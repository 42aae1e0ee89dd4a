//! Empirical likelihood for the spatial error model.
//!
//! At a candidate `θ = (β, ρ, σ²)` every unit contributes
//!
//! ```text
//! ω_i = ( b_i ε_i ;  g̃_ii(ε_i² − σ²) + 2ε_i Σ_{j<i} g̃_ij ε_j ;  ε_i² − σ² )
//! ```
//!
//! where `b_i` is column `i` of `XᵀA(ρ)` and `ε = A(ρ)(y − Xβ)`. The middle
//! coordinate is a martingale difference in the unit ordering, and the
//! column sums of `ω` are exactly the Gaussian score equations. The EL ratio
//! statistic `2 Σ log(1 + λᵀω_i)` is computed from the dual multiplier `λ`
//! found by [`solve_lambda`].

pub mod chi2;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sem::{self, SemDesign, Theta};

pub use chi2::{chi2_cdf, chi2_quantile};

/// `n × (k+2)` matrix whose row `i` is `ω_iᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix(DMatrix<f64>);

impl OmegaMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument("empty estimating-function matrix".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("estimating functions must be finite".into()));
        }
        Ok(OmegaMatrix(values))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    /// `Σ_i ω_i`.
    pub fn column_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.0.column_iter().map(|c| c.sum()))
    }
}

/// Builds the estimating-function rows. `a_rho` is `A(ρ)`, `gtilde` is
/// `G̃(ρ)`, `eps` the residuals at `θ`.
pub fn omega(
    design: &SemDesign,
    gtilde: &DMatrix<f64>,
    a_rho: &DMatrix<f64>,
    eps: &DVector<f64>,
    sigma2: f64,
) -> Result<OmegaMatrix> {
    let n = design.n();
    if gtilde.shape() != (n, n) || a_rho.shape() != (n, n) || eps.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "omega needs {n}x{n} matrices and a length-{n} residual vector"
        )));
    }
    // row i of AᵀX is b_iᵀ
    let b = a_rho.tr_mul(design.x());
    Ok(omega_from_parts(&b, gtilde, eps, sigma2))
}

pub(crate) fn omega_from_parts(
    b: &DMatrix<f64>,
    gtilde: &DMatrix<f64>,
    eps: &DVector<f64>,
    sigma2: f64,
) -> OmegaMatrix {
    let (n, k) = b.shape();
    let mut out = DMatrix::zeros(n, k + 2);
    for i in 0..n {
        let e = eps[i];
        for c in 0..k {
            out[(i, c)] = b[(i, c)] * e;
        }
        let mut cross = 0.0;
        for j in 0..i {
            cross += gtilde[(i, j)] * eps[j];
        }
        let centered = e * e - sigma2;
        out[(i, k)] = gtilde[(i, i)] * centered + 2.0 * e * cross;
        out[(i, k + 1)] = centered;
    }
    OmegaMatrix(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaStatus {
    Converged,
    /// Zero is not interior to the convex hull of the `ω_i`.
    HullInfeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Gradient tolerance relative to `1 + ‖ω̄‖`, applied to `‖g‖ (1 + ‖λ‖)`.
    pub tol: f64,
    /// Divergence bound on `‖λ‖ · max_i ‖ω_i‖`.
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 100,
            tol: 1e-10,
            divergence_bound: 1e8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSolution {
    pub lambda: DVector<f64>,
    pub status: LambdaStatus,
    pub iterations: usize,
    /// `‖(1/n) Σ ω_i / (1 + λᵀω_i)‖` at the returned `λ`.
    pub gradient_norm: f64,
    /// Dual objective `Σ log(1 + λᵀω_i)` at each accepted iterate, starting
    /// from `λ = 0`.
    pub dual_trace: Vec<f64>,
}

impl LambdaSolution {
    /// Implied EL weights `p_i = 1 / (n (1 + λᵀω_i))`.
    pub fn weights(&self, omegas: &OmegaMatrix) -> DVector<f64> {
        let n = omegas.n() as f64;
        let t = omegas.values() * &self.lambda;
        t.map(|ti| 1.0 / (n * (1.0 + ti)))
    }
}

fn dual_value(t: &DVector<f64>) -> f64 {
    t.iter().map(|ti| ti.ln_1p()).sum()
}

/// Maximizes the concave dual `Σ log(1 + λᵀω_i)` by damped Newton.
///
/// Stops when `‖g‖ (1 + ‖λ‖) ≤ tol · (1 + ‖ω̄‖)` for the mean gradient `g`. Trial points must
/// keep every `1 + λᵀω_i ≥ 1/n²` and increase the dual (or, within rounding
/// of the dual, shrink the gradient); the step is halved until both hold.
/// Unbounded growth of `λ` means the origin is outside the convex hull of
/// the `ω_i`.
pub fn solve_lambda(omegas: &OmegaMatrix, opts: &SolverOptions) -> Result<LambdaSolution> {
    let n = omegas.n();
    let d = omegas.dim();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "need more rows than estimating functions, got n = {n}, dim = {d}"
        )));
    }
    let om = omegas.values();
    let nf = n as f64;
    let margin = 1.0 / (nf * nf);
    let mean_norm = (omegas.column_sums() / nf).norm();
    let grad_tol = opts.tol * (1.0 + mean_norm);
    let max_row = om.row_iter().map(|r| r.norm()).fold(0.0, f64::max);

    let mut lambda = DVector::zeros(d);
    let mut t = DVector::zeros(n); // λᵀω_i
    let mut value = 0.0;
    let mut trace = vec![value];

    let gradient = |t: &DVector<f64>| -> DVector<f64> {
        let r = t.map(|ti| 1.0 / (1.0 + ti));
        om.tr_mul(&r)
    };

    let mut grad = gradient(&t);
    let mut iterations = 0;
    loop {
        let gnorm = grad.norm() / nf;
        // Σ p_i = 1 − λᵀg, so scaling by 1 + ‖λ‖ also pins the weight sum
        if gnorm * (1.0 + lambda.norm()) <= grad_tol {
            return Ok(LambdaSolution {
                lambda,
                status: LambdaStatus::Converged,
                iterations,
                gradient_norm: gnorm,
                dual_trace: trace,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(LambdaSolution {
                lambda,
                status: LambdaStatus::MaxIter,
                iterations,
                gradient_norm: gnorm,
                dual_trace: trace,
            });
        }
        iterations += 1;

        // negative Hessian: Σ ω_i ω_iᵀ / (1 + t_i)²
        let mut scaled = om.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= 1.0 + t[i];
        }
        let h = scaled.tr_mul(&scaled);
        let step = newton_direction(h, &grad);
        let dt = om * &step;

        let mut alpha = 1.0;
        let mut accepted = false;
        let gnorm_now = grad.norm();
        let slack = 4.0 * f64::EPSILON * (1.0 + value.abs());
        for _ in 0..60 {
            let trial_t = &t + &dt * alpha;
            if trial_t.iter().all(|ti| 1.0 + ti >= margin) {
                let v = dual_value(&trial_t);
                // at the resolution limit of the dual, progress shows only
                // in the gradient
                if v > value || (v >= value - slack && gradient(&trial_t).norm() < gnorm_now) {
                    lambda += &step * alpha;
                    t = trial_t;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        let blown_up = lambda.norm() * max_row > opts.divergence_bound;
        if blown_up || !accepted {
            let near_boundary = t.iter().any(|ti| 1.0 + ti < 2.0 * margin);
            if blown_up || near_boundary {
                return Ok(LambdaSolution {
                    gradient_norm: gradient(&t).norm() / nf,
                    lambda,
                    status: LambdaStatus::HullInfeasible,
                    iterations,
                    dual_trace: trace,
                });
            }
            // no ascent possible from an interior point: the iterate is
            // already optimal to working precision
            let gnorm = grad.norm() / nf;
            return Ok(LambdaSolution {
                lambda,
                status: if gnorm <= grad_tol.max(1e-8 * (1.0 + mean_norm)) {
                    LambdaStatus::Converged
                } else {
                    LambdaStatus::MaxIter
                },
                iterations,
                gradient_norm: gnorm,
                dual_trace: trace,
            });
        }
        trace.push(value);
        grad = gradient(&t);
    }
}

fn newton_direction(h: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return ch.solve(grad);
    }
    // rank-deficient ω: least-squares direction
    let svd = h.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    svd.solve(grad, tol).unwrap_or_else(|_| grad.clone())
}

#[derive(Debug, Clone)]
pub struct ElResult {
    /// `2 Σ log(1 + λᵀω_i)`, or `+∞` when the hull condition fails.
    pub statistic: f64,
    pub lambda: LambdaSolution,
    pub df: usize,
}

impl ElResult {
    pub fn is_feasible(&self) -> bool {
        self.lambda.status != LambdaStatus::HullInfeasible
    }
}

pub fn el_statistic(omegas: &OmegaMatrix, opts: &SolverOptions) -> Result<ElResult> {
    let lambda = solve_lambda(omegas, opts)?;
    let statistic = match lambda.status {
        LambdaStatus::HullInfeasible => f64::INFINITY,
        _ => {
            let t = omegas.values() * &lambda.lambda;
            (2.0 * dual_value(&t)).max(0.0)
        }
    };
    Ok(ElResult {
        statistic,
        lambda,
        df: omegas.dim(),
    })
}

/// Everything about `θ₀` that does not depend on the response: `A(ρ₀)`,
/// `G̃(ρ₀)` and the `b_i`. Reused across Monte Carlo replications.
#[derive(Debug, Clone)]
pub struct ElContext {
    theta: Theta,
    a_rho: DMatrix<f64>,
    gtilde: DMatrix<f64>,
    b: DMatrix<f64>,
    xbeta: DVector<f64>,
}

impl ElContext {
    pub fn new(design: &SemDesign, theta: &Theta) -> Result<Self> {
        theta.validate()?;
        if theta.beta.len() != design.k() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, design has {} columns",
                theta.beta.len(),
                design.k()
            )));
        }
        let a_rho = sem::build_a(design.w(), theta.rho)?;
        let (_, gtilde) = sem::g_matrices(design.w(), theta.rho)?;
        let b = a_rho.tr_mul(design.x());
        Ok(ElContext {
            theta: theta.clone(),
            xbeta: design.x() * &theta.beta,
            a_rho,
            gtilde,
            b,
        })
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn a_rho(&self) -> &DMatrix<f64> {
        &self.a_rho
    }

    pub fn gtilde(&self) -> &DMatrix<f64> {
        &self.gtilde
    }

    pub fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.a_rho * (y - &self.xbeta)
    }

    pub fn omega(&self, y: &DVector<f64>) -> OmegaMatrix {
        omega_from_parts(&self.b, &self.gtilde, &self.residuals(y), self.theta.sigma2)
    }

    pub fn evaluate(&self, y: &DVector<f64>, opts: &SolverOptions) -> Result<ElResult> {
        if y.len() != self.a_rho.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, expected {}",
                y.len(),
                self.a_rho.nrows()
            )));
        }
        el_statistic(&self.omega(y), opts)
    }
}

#[derive(Debug, Clone)]
pub struct TestReport {
    pub statistic: f64,
    pub threshold: f64,
    pub covered: bool,
}

#[derive(Debug, Clone)]
pub struct ElTestReport {
    pub report: TestReport,
    pub el: ElResult,
}

/// Is `θ₀` inside the level-`alpha` EL confidence region?
pub fn el_test(design: &SemDesign, y: &DVector<f64>, theta0: &Theta, alpha: f64) -> Result<ElTestReport> {
    let threshold = chi2_quantile(design.df(), alpha)?;
    let ctx = ElContext::new(design, theta0)?;
    let el = ctx.evaluate(y, &SolverOptions::default())?;
    Ok(ElTestReport {
        report: TestReport {
            statistic: el.statistic,
            threshold,
            covered: el.is_feasible() && el.statistic <= threshold,
        },
        el,
    })
}
