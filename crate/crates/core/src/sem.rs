//! The spatial error model `y = Xβ + u`, `u = ρWu + ε`.
//!
//! Random draws use ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), a
//! counter-based stream cipher generator whose output is identical on every
//! platform, so a seed fully determines a sample.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::linalg::LuFactor;
use crate::weights::WeightMatrix;

/// Row count below which [`g_matrices`] forms `A(ρ)⁻¹` explicitly.
const EXPLICIT_INVERSE_MAX_N: usize = 50;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct SemDesign {
    x: DMatrix<f64>,
    w: WeightMatrix,
}

impl SemDesign {
    pub fn new(x: DMatrix<f64>, w: WeightMatrix) -> Result<Self> {
        let (n, k) = x.shape();
        if n != w.n() {
            return Err(Error::DimensionMismatch(format!(
                "design has {n} rows but the weight matrix has {} units",
                w.n()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("design needs at least one column".into()));
        }
        if n <= k + 2 {
            return Err(Error::InvalidArgument(format!("need n > k + 2, got n = {n}, k = {k}")));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("design entry {v} is not finite")));
        }
        Ok(SemDesign { x, w })
    }

    /// Single regressor `x_i = i/(n+1)`, optionally preceded by an intercept.
    pub fn ramp(w: WeightMatrix, intercept: bool) -> Result<Self> {
        let n = w.n();
        let ramp = |i: usize| (i + 1) as f64 / (n + 1) as f64;
        let x = if intercept {
            DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ramp(i) })
        } else {
            DMatrix::from_fn(n, 1, |i, _| ramp(i))
        };
        SemDesign::new(x, w)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &WeightMatrix {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Degrees of freedom of the full-parameter test, `k + 2`.
    pub fn df(&self) -> usize {
        self.k() + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

impl Theta {
    pub fn new(beta: DVector<f64>, rho: f64, sigma2: f64) -> Result<Self> {
        let t = Theta { beta, rho, sigma2 };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("beta must be finite".into()));
        }
        Ok(())
    }

    fn check_against(&self, design: &SemDesign) -> Result<()> {
        if self.beta.len() != design.k() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, design has {} columns",
                self.beta.len(),
                design.k()
            )));
        }
        Ok(())
    }
}

/// Innovation distributions used in the coverage experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
pub enum ErrorDistribution {
    #[serde(rename = "normal")]
    StandardNormal,
    #[serde(rename = "t5")]
    StudentT5,
    #[serde(rename = "chisq4")]
    CenteredChiSquared4,
}

impl ErrorDistribution {
    pub const ALL: [ErrorDistribution; 3] = [
        ErrorDistribution::StandardNormal,
        ErrorDistribution::StudentT5,
        ErrorDistribution::CenteredChiSquared4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorDistribution::StandardNormal => "normal",
            ErrorDistribution::StudentT5 => "t5",
            ErrorDistribution::CenteredChiSquared4 => "chisq4",
        }
    }

    /// Variance of the unscaled draw.
    pub fn raw_variance(self) -> f64 {
        match self {
            ErrorDistribution::StandardNormal => 1.0,
            ErrorDistribution::StudentT5 => 5.0 / 3.0,
            ErrorDistribution::CenteredChiSquared4 => 8.0,
        }
    }
}

impl std::str::FromStr for ErrorDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ErrorDistribution::StandardNormal),
            "t5" => Ok(ErrorDistribution::StudentT5),
            "chisq4" => Ok(ErrorDistribution::CenteredChiSquared4),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution `{other}` (expected normal, t5 or chisq4)"
            ))),
        }
    }
}

impl std::fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Unscaled i.i.d. mean-zero draws: `N(0,1)`, `t(5)`, or `χ²₄ − 4`.
pub fn error_draw(dist: ErrorDistribution, n: usize, rng: &mut Rng) -> DVector<f64> {
    match dist {
        ErrorDistribution::StandardNormal => DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng))),
        ErrorDistribution::StudentT5 => {
            let t = StudentT::new(5.0).expect("valid dof");
            DVector::from_iterator(n, (0..n).map(|_| t.sample(rng)))
        }
        ErrorDistribution::CenteredChiSquared4 => {
            let c = ChiSquared::new(4.0).expect("valid dof");
            DVector::from_iterator(n, (0..n).map(|_| c.sample(rng) - 4.0))
        }
    }
}

/// `A(ρ) = I − ρW`, checked for numerical singularity.
pub fn build_a(w: &WeightMatrix, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    let a = a_matrix(w, rho);
    LuFactor::new(a.clone())?;
    Ok(a)
}

pub(crate) fn a_matrix(w: &WeightMatrix, rho: f64) -> DMatrix<f64> {
    let n = w.n();
    DMatrix::identity(n, n) - w.values() * rho
}

/// `G = W A(ρ)⁻¹` and its symmetric part `G̃ = (G + Gᵀ)/2`.
pub fn g_matrices(w: &WeightMatrix, rho: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = build_a(w, rho)?;
    let g = if w.n() < EXPLICIT_INVERSE_MAX_N {
        w.values() * LuFactor::new(a)?.inverse()
    } else {
        // Aᵀ Gᵀ = Wᵀ
        LuFactor::new(a.transpose())?
            .solve_matrix(&w.values().transpose())
            .transpose()
    };
    let gt = symmetric_part(&g);
    Ok((g, gt))
}

pub(crate) fn symmetric_part(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut gt = DMatrix::zeros(n, n);
    for i in 0..n {
        gt[(i, i)] = g[(i, i)];
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            gt[(i, j)] = v;
            gt[(j, i)] = v;
        }
    }
    gt
}

/// `ε = A(ρ)(y − Xβ)`.
pub fn residuals(design: &SemDesign, y: &DVector<f64>, theta: &Theta) -> Result<DVector<f64>> {
    theta.check_against(design)?;
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    let u = y - design.x() * &theta.beta;
    Ok(&u - (design.w().values() * &u) * theta.rho)
}

#[derive(Debug, Clone)]
pub struct SemSample {
    pub y: DVector<f64>,
    /// The scaled innovation draw that generated `y`.
    pub eps: DVector<f64>,
    pub theta_true: Theta,
    pub seed: u64,
}

/// Draws samples for one fixed `(design, θ, distribution)`; `A(ρ)` is
/// factored once.
pub struct Simulator<'a> {
    design: &'a SemDesign,
    theta: Theta,
    dist: ErrorDistribution,
    a_lu: LuFactor,
    mean: DVector<f64>,
    scale: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(design: &'a SemDesign, theta: &Theta, dist: ErrorDistribution) -> Result<Self> {
        theta.validate()?;
        theta.check_against(design)?;
        let a = build_a(design.w(), theta.rho)?;
        Ok(Simulator {
            design,
            theta: theta.clone(),
            dist,
            a_lu: LuFactor::new(a)?,
            mean: design.x() * &theta.beta,
            scale: (theta.sigma2 / dist.raw_variance()).sqrt(),
        })
    }

    pub fn draw(&self, seed: u64) -> SemSample {
        let mut rng = rng_from_seed(seed);
        let eps = error_draw(self.dist, self.design.n(), &mut rng) * self.scale;
        let u = self.a_lu.solve(&eps);
        SemSample {
            y: &self.mean + u,
            eps,
            theta_true: self.theta.clone(),
            seed,
        }
    }
}

pub fn simulate(design: &SemDesign, theta: &Theta, dist: ErrorDistribution, seed: u64) -> Result<SemSample> {
    Ok(Simulator::new(design, theta, dist)?.draw(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{build_grid_queen, row_standardize};

    fn pair() -> WeightMatrix {
        build_grid_queen(1, 2).unwrap()
    }

    fn std_grid(r: usize, c: usize) -> WeightMatrix {
        row_standardize(&build_grid_queen(r, c).unwrap()).0
    }

    fn theta(beta: &[f64], rho: f64, sigma2: f64) -> Theta {
        Theta::new(DVector::from_column_slice(beta), rho, sigma2).unwrap()
    }

    #[test]
    fn a_at_zero_is_identity() {
        let w = std_grid(3, 3);
        assert_eq!(build_a(&w, 0.0).unwrap(), DMatrix::identity(9, 9));
    }

    #[test]
    fn a_two_by_two() {
        let a = build_a(&pair(), 0.5).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
    }

    #[test]
    fn a_rejects_rho_out_of_range() {
        assert!(build_a(&pair(), 1.0).is_err());
        assert!(build_a(&pair(), f64::NAN).is_err());
    }

    #[test]
    fn a_singular_for_unit_root() {
        // det(I - rho W) = 1 - rho^2 here, below the pivot threshold this close to 1
        let w = WeightMatrix::from_dense(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.5, 0.0])).unwrap();
        assert!(build_a(&w, 1.0 - 1e-16).is_err());
    }

    #[test]
    fn a_nonsingular_on_standardized_grid() {
        let w = std_grid(7, 7);
        for rho in [-0.85, 0.85] {
            let a = build_a(&w, rho).unwrap();
            let lu = LuFactor::new(a.clone()).unwrap();
            let inv = lu.inverse();
            assert!((&a * inv - DMatrix::<f64>::identity(49, 49)).amax() < 1e-10);
        }
    }

    #[test]
    fn g_at_rho_zero() {
        let w = WeightMatrix::from_dense(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0],
        ))
        .unwrap();
        let (g, gt) = g_matrices(&w, 0.0).unwrap();
        assert!((&g - w.values()).amax() < 1e-15);
        let half = (w.values() + w.values().transpose()) * 0.5;
        assert!((&gt - half).amax() < 1e-15);
    }

    #[test]
    fn g_two_by_two_by_hand() {
        // A⁻¹ = (1/0.75)[[1, .5], [.5, 1]], W A⁻¹ = (1/0.75)[[.5, 1], [1, .5]]
        let (g, gt) = g_matrices(&pair(), 0.5).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 0.5]) / 0.75;
        assert!((&g - &expect).amax() < 1e-14);
        assert!((&gt - &expect).amax() < 1e-14);
    }

    #[test]
    fn g_symmetric_for_symmetric_w_both_paths() {
        for (r, c) in [(4, 4), (8, 8)] {
            let w = build_grid_queen(r, c).unwrap();
            let (g, gt) = g_matrices(&w, 0.1).unwrap();
            assert!((&g - g.transpose()).amax() < 1e-10);
            assert!((&g - &gt).amax() < 1e-10);
            assert_eq!(gt, gt.transpose());
        }
    }

    #[test]
    fn g_paths_agree() {
        // n = 64 takes the solve path; compare with the explicit inverse.
        let w = std_grid(8, 8);
        let (g, _) = g_matrices(&w, -0.6).unwrap();
        let inv = LuFactor::new(build_a(&w, -0.6).unwrap()).unwrap().inverse();
        assert!((g - w.values() * inv).amax() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let w = std_grid(3, 4);
        let d = SemDesign::ramp(w, false).unwrap();
        let t = theta(&[3.5], 0.4, 1.0);
        let y = d.x() * &t.beta;
        assert!(residuals(&d, &y, &t).unwrap().amax() < 1e-15);

        let t0 = theta(&[1.0], 0.0, 1.0);
        let y = DVector::from_fn(12, |i, _| i as f64);
        let r = residuals(&d, &y, &t0).unwrap();
        assert_eq!(r, &y - d.x() * &t0.beta);

        assert!(residuals(&d, &DVector::zeros(3), &t0).is_err());
        assert!(residuals(&d, &y, &theta(&[1.0, 2.0], 0.0, 1.0)).is_err());
    }

    #[test]
    fn simulate_round_trips_residuals() {
        let d = SemDesign::ramp(std_grid(7, 7), false).unwrap();
        for dist in ErrorDistribution::ALL {
            let t = theta(&[3.5], 0.85, dist.raw_variance());
            let s = simulate(&d, &t, dist, 11).unwrap();
            let e = residuals(&d, &s.y, &t).unwrap();
            assert!((e - &s.eps).amax() < 1e-10);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let d = SemDesign::ramp(std_grid(5, 5), false).unwrap();
        let t = theta(&[3.5], -0.15, 1.0);
        let a = simulate(&d, &t, ErrorDistribution::StudentT5, 99).unwrap();
        let b = simulate(&d, &t, ErrorDistribution::StudentT5, 99).unwrap();
        assert_eq!(a.y, b.y);
        let c = simulate(&d, &t, ErrorDistribution::StudentT5, 100).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn simulate_without_spatial_mixing_has_unit_variance() {
        let d = SemDesign::ramp(std_grid(30, 30), false).unwrap();
        let t = theta(&[3.5], 0.0, 1.0);
        let s = simulate(&d, &t, ErrorDistribution::StandardNormal, 5).unwrap();
        let u = &s.y - d.x() * &t.beta;
        let n = u.len() as f64;
        let m = u.mean();
        let var = u.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn simulate_mean_matches_design() {
        let d = SemDesign::ramp(std_grid(4, 4), false).unwrap();
        let t = theta(&[3.5], 0.5, 1.0);
        let sim = Simulator::new(&d, &t, ErrorDistribution::CenteredChiSquared4).unwrap();
        let reps = 10_000;
        let mut acc = DVector::zeros(16);
        for r in 0..reps {
            acc += sim.draw(r).y;
        }
        acc /= reps as f64;
        for i in 0..16 {
            let expect = 3.5 * (i + 1) as f64 / 17.0;
            // sd of y_i is at most ~2 here; 4 standard errors of the mean
            assert!((acc[i] - expect).abs() < 4.0 * 2.0 / (reps as f64).sqrt(), "unit {i}");
        }
    }

    fn sample_moments(v: &DVector<f64>) -> (f64, f64, f64) {
        let n = v.len() as f64;
        let m = v.mean();
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        (m, m2, m3 / m2.powf(1.5))
    }

    #[test]
    fn raw_draw_moments() {
        let mut rng = rng_from_seed(2024);
        let (m, v, _) = sample_moments(&error_draw(ErrorDistribution::StandardNormal, 100_000, &mut rng));
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.02);

        let (m, _, skew) = sample_moments(&error_draw(ErrorDistribution::CenteredChiSquared4, 100_000, &mut rng));
        assert!(m.abs() < 0.05);
        // mu3 / sigma^3 = 32 / 8^1.5
        let expect = 32.0 / 8f64.powf(1.5);
        assert!((expect - 2f64.sqrt()).abs() < 1e-12);
        assert!((skew - expect).abs() < 0.1, "skew {skew}");

        let (m, v, _) = sample_moments(&error_draw(ErrorDistribution::StudentT5, 100_000, &mut rng));
        assert!(m.abs() < 0.02);
        assert!((v - 5.0 / 3.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn design_validation() {
        let w = std_grid(1, 3);
        assert!(SemDesign::ramp(w.clone(), false).is_err()); // n = 3 = k + 2
        let x = DMatrix::from_element(3, 1, f64::INFINITY);
        assert!(SemDesign::new(x, w).is_err());
        let w4 = std_grid(2, 2);
        assert!(SemDesign::new(DMatrix::zeros(5, 1), w4).is_err());
    }

    #[test]
    fn theta_validation() {
        assert!(Theta::new(DVector::from_element(1, 1.0), 1.0, 1.0).is_err());
        assert!(Theta::new(DVector::from_element(1, 1.0), 0.0, 0.0).is_err());
        assert!(Theta::new(DVector::from_element(1, f64::NAN), 0.0, 1.0).is_err());
    }
}
