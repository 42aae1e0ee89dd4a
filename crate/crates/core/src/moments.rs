//! Exact moments of the estimating functions.
//!
//! These are closed-form oracles: the covariance of `Σ_i ω_i` at the true
//! parameter, the mean and variance of a general linear-quadratic form in
//! independent innovations, and the martingale difference terms whose sum
//! reproduces the centred quadratic score.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sem::{ErrorDistribution, SemDesign};

/// `(E ε², E ε³, E ε⁴)` of a mean-zero innovation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistMoments {
    pub sigma2: f64,
    pub mu3: f64,
    pub mu4: f64,
}

impl DistMoments {
    pub fn new(sigma2: f64, mu3: f64, mu4: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(mu4 >= sigma2 * sigma2) {
            return Err(Error::InvalidArgument(format!(
                "mu4 = {mu4} violates mu4 >= sigma2^2 = {}",
                sigma2 * sigma2
            )));
        }
        Ok(DistMoments { sigma2, mu3, mu4 })
    }

    /// Moments of the unit-variance Gaussian.
    pub fn gaussian(sigma2: f64) -> Self {
        DistMoments {
            sigma2,
            mu3: 0.0,
            mu4: 3.0 * sigma2 * sigma2,
        }
    }
}

/// Moments of `dist` rescaled to variance `sigma2_target`.
///
/// Raw moments: `N(0,1)` → (1, 0, 3); `t(5)` → (5/3, 0, 25) from
/// `E t⁴ = 3ν²/((ν−2)(ν−4))`; `χ²₄ − 4` → (8, 32, 384) from the central
/// moments `2d, 8d, 12d² + 48d` of `χ²_d`.
pub fn dist_moments(dist: ErrorDistribution, sigma2_target: f64) -> Result<DistMoments> {
    if !(sigma2_target > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target variance must be positive, got {sigma2_target}"
        )));
    }
    let (s2, m3, m4) = match dist {
        ErrorDistribution::StandardNormal => (1.0, 0.0, 3.0),
        ErrorDistribution::StudentT5 => {
            let nu = 5.0;
            (nu / (nu - 2.0), 0.0, 3.0 * nu * nu / ((nu - 2.0) * (nu - 4.0)))
        }
        ErrorDistribution::CenteredChiSquared4 => {
            let d = 4.0;
            (2.0 * d, 8.0 * d, 12.0 * d * d + 48.0 * d)
        }
    };
    let c2 = sigma2_target / s2;
    Ok(DistMoments {
        sigma2: sigma2_target,
        mu3: m3 * c2.powf(1.5),
        mu4: m4 * c2 * c2,
    })
}

/// `Cov(Σ ω_i)` split into its blocks.
#[derive(Debug, Clone)]
pub struct SigmaBlocks {
    pub full: DMatrix<f64>,
    pub s11: DMatrix<f64>,
    pub s12: DVector<f64>,
    pub s13: DVector<f64>,
    pub s22: f64,
    pub s23: f64,
    pub s33: f64,
}

impl SigmaBlocks {
    /// Extreme eigenvalues of `Σ/n`, ascending.
    pub fn scaled_eigen_range(&self, n: usize) -> (f64, f64) {
        let ev = linalg::sym_eigenvalues(&(&self.full / n as f64));
        (ev[0], ev[ev.len() - 1])
    }
}

pub fn sigma_matrix(
    design: &SemDesign,
    a_rho: &DMatrix<f64>,
    gtilde: &DMatrix<f64>,
    m: &DistMoments,
) -> Result<SigmaBlocks> {
    let n = design.n();
    let k = design.k();
    if a_rho.shape() != (n, n) || gtilde.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "sigma_matrix needs {n}x{n} A(rho) and G-tilde"
        )));
    }
    let s2 = m.sigma2;
    let s4 = s2 * s2;
    let xa = design.x().transpose() * a_rho; // k × n, column i is b_i
    let diag = gtilde.diagonal();

    let s11 = (&xa * xa.transpose()) * s2;
    let s12 = (&xa * &diag) * m.mu3;
    let s13 = DVector::from_iterator(k, xa.row_iter().map(|r| r.sum())) * m.mu3;
    let tr_g2 = gtilde.iter().map(|v| v * v).sum::<f64>();
    let s22 = 2.0 * s4 * tr_g2 + (m.mu4 - 3.0 * s4) * diag.norm_squared();
    let s23 = (m.mu4 - s4) * gtilde.trace();
    let s33 = n as f64 * (m.mu4 - s4);

    let mut full = DMatrix::zeros(k + 2, k + 2);
    full.view_mut((0, 0), (k, k)).copy_from(&s11);
    for r in 0..k {
        full[(r, k)] = s12[r];
        full[(k, r)] = s12[r];
        full[(r, k + 1)] = s13[r];
        full[(k + 1, r)] = s13[r];
    }
    full[(k, k)] = s22;
    full[(k, k + 1)] = s23;
    full[(k + 1, k)] = s23;
    full[(k + 1, k + 1)] = s33;
    // s11 is symmetric up to rounding; mirror it exactly
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (full[(i, j)] + full[(j, i)]);
            full[(i, j)] = v;
            full[(j, i)] = v;
        }
    }
    Ok(SigmaBlocks {
        full,
        s11,
        s12,
        s13,
        s22,
        s23,
        s33,
    })
}

/// Mean and variance of `Q = εᵀAε + bᵀε` for independent mean-zero `ε_i`
/// with per-unit moments `m[i]`.
pub fn quadratic_variance(a: &DMatrix<f64>, b: &DVector<f64>, m: &[DistMoments]) -> Result<(f64, f64)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || m.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "quadratic form needs an n x n matrix, length-n vector and n moment sets (n = {n})"
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!(
                    "coefficient matrix is not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let mut mean = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        let (si, aii) = (m[i].sigma2, a[(i, i)]);
        mean += aii * si;
        for j in 0..n {
            var += 2.0 * a[(i, j)].powi(2) * si * m[j].sigma2;
        }
        var += b[i] * b[i] * si;
        var += aii * aii * (m[i].mu4 - 3.0 * si * si) + 2.0 * b[i] * aii * m[i].mu3;
    }
    Ok((mean, var))
}

/// `Ỹ_i = g̃_ii(ε_i² − σ²) + 2ε_i Σ_{j<i} g̃_ij ε_j`.
pub fn martingale_terms(gtilde: &DMatrix<f64>, eps: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let n = eps.len();
    if gtilde.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "G-tilde is {}x{}, residuals have length {n}",
            gtilde.nrows(),
            gtilde.ncols()
        )));
    }
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut cross = 0.0;
        for j in 0..i {
            cross += gtilde[(i, j)] * eps[j];
        }
        out[i] = gtilde[(i, i)] * (eps[i] * eps[i] - sigma2) + 2.0 * eps[i] * cross;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::{build_a, error_draw, g_matrices, rng_from_seed};
    use crate::weights::{build_grid_queen, row_standardize};
    use rand::Rng;

    fn design(r: usize, c: usize) -> SemDesign {
        SemDesign::ramp(row_standardize(&build_grid_queen(r, c).unwrap()).0, false).unwrap()
    }

    fn random_sym(n: usize, rng: &mut crate::sem::Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn gaussian_and_scaled_moments() {
        assert_eq!(
            dist_moments(ErrorDistribution::StandardNormal, 1.0).unwrap(),
            DistMoments::gaussian(1.0)
        );
        let c = dist_moments(ErrorDistribution::CenteredChiSquared4, 8.0).unwrap();
        assert_eq!((c.sigma2, c.mu3, c.mu4), (8.0, 32.0, 384.0));
        let t = dist_moments(ErrorDistribution::StudentT5, 5.0 / 3.0).unwrap();
        assert!((t.sigma2 - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.mu3, 0.0);
        assert!((t.mu4 - 25.0).abs() < 1e-12);

        // scaling chi-squared to unit variance: mu3 = 32/8^1.5, mu4 = 384/64
        let u = dist_moments(ErrorDistribution::CenteredChiSquared4, 1.0).unwrap();
        assert!((u.mu3 - 2f64.sqrt()).abs() < 1e-12);
        assert!((u.mu4 - 6.0).abs() < 1e-12);
        assert!(dist_moments(ErrorDistribution::StudentT5, 0.0).is_err());
    }

    /// Fourth and third moments by Monte Carlo, 2·10⁶ draws each.
    #[test]
    fn raw_moments_by_simulation() {
        let mut rng = rng_from_seed(77);
        let n = 2_000_000;
        let c = error_draw(ErrorDistribution::CenteredChiSquared4, n, &mut rng);
        let m3 = c.iter().map(|v| v.powi(3)).sum::<f64>() / n as f64;
        let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        assert!((m3 - 32.0).abs() < 1.5, "mu3 {m3}");
        assert!((m4 - 384.0).abs() < 20.0, "mu4 {m4}");
        // t(5) has an infinite 8th moment; only a loose fourth-moment check
        let t = error_draw(ErrorDistribution::StudentT5, n, &mut rng);
        let m4 = t.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        assert!((m4 - 25.0).abs() < 5.0, "mu4 {m4}");
    }

    #[test]
    fn moments_validation() {
        assert!(DistMoments::new(1.0, 0.0, 0.5).is_err());
        assert!(DistMoments::new(0.0, 0.0, 1.0).is_err());
        assert!(DistMoments::new(1.0, 0.3, 2.0).is_ok());
    }

    #[test]
    fn gaussian_cross_blocks_vanish() {
        let d = design(5, 5);
        let a = build_a(d.w(), 0.4).unwrap();
        let (_, gt) = g_matrices(d.w(), 0.4).unwrap();
        let s = sigma_matrix(&d, &a, &gt, &DistMoments::gaussian(2.0)).unwrap();
        assert_eq!(s.s12.amax(), 0.0);
        assert_eq!(s.s13.amax(), 0.0);
        let tr_g2 = (&gt * &gt).trace();
        assert!((s.s22 - 2.0 * 4.0 * tr_g2).abs() < 1e-10 * s.s22);
        assert_eq!(s.full, s.full.transpose());
    }

    #[test]
    fn rho_zero_gives_xtx() {
        let d = design(4, 6);
        let a = build_a(d.w(), 0.0).unwrap();
        let (_, gt) = g_matrices(d.w(), 0.0).unwrap();
        let m = dist_moments(ErrorDistribution::StudentT5, 5.0 / 3.0).unwrap();
        let s = sigma_matrix(&d, &a, &gt, &m).unwrap();
        let xtx = d.x().transpose() * d.x() * (5.0 / 3.0);
        assert!((&s.s11 - xtx).amax() < 1e-12);
    }

    #[test]
    fn sigma_blocks_match_quadratic_variance() {
        let d = design(6, 6);
        let n = d.n();
        for dist in ErrorDistribution::ALL {
            let m = dist_moments(dist, dist.raw_variance()).unwrap();
            let a = build_a(d.w(), -0.6).unwrap();
            let (_, gt) = g_matrices(d.w(), -0.6).unwrap();
            let s = sigma_matrix(&d, &a, &gt, &m).unwrap();
            let ms = vec![m; n];
            let (_, v22) = quadratic_variance(&gt, &DVector::zeros(n), &ms).unwrap();
            assert!((v22 - s.s22).abs() <= 1e-10 * s.s22.abs());
            let (mean33, v33) = quadratic_variance(&DMatrix::identity(n, n), &DVector::zeros(n), &ms).unwrap();
            assert!((v33 - s.s33).abs() <= 1e-10 * s.s33);
            assert!((mean33 - n as f64 * m.sigma2).abs() < 1e-10 * mean33);
        }
    }

    #[test]
    fn quadratic_variance_simple_cases() {
        let n = 5;
        let unit = vec![DistMoments::gaussian(1.0); n];
        let mut e1 = DVector::zeros(n);
        e1[0] = 1.0;
        assert_eq!(
            quadratic_variance(&DMatrix::zeros(n, n), &e1, &unit).unwrap(),
            (0.0, 1.0)
        );
        let (m, v) = quadratic_variance(&DMatrix::identity(n, n), &DVector::zeros(n), &unit).unwrap();
        assert_eq!((m, v), (n as f64, 2.0 * n as f64));
    }

    #[test]
    fn quadratic_variance_rejects_asymmetry() {
        let mut a = DMatrix::identity(3, 3);
        a[(0, 1)] = 1.0;
        let m = vec![DistMoments::gaussian(1.0); 3];
        assert!(matches!(
            quadratic_variance(&a, &DVector::zeros(3), &m),
            Err(Error::InvalidArgument(_))
        ));
        assert!(quadratic_variance(&DMatrix::identity(3, 3), &DVector::zeros(2), &m).is_err());
    }

    #[test]
    fn martingale_diagonal_has_no_cross_terms() {
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, -1.0, 2.0]));
        let e = DVector::from_column_slice(&[1.0, 2.0, -3.0]);
        let y = martingale_terms(&g, &e, 1.5).unwrap();
        assert_eq!(y, DVector::from_column_slice(&[0.5 * -0.5, -2.5, 2.0 * 7.5]));
    }

    #[test]
    fn martingale_sum_identity() {
        let mut rng = rng_from_seed(5);
        for n in [2, 7, 30] {
            let g = random_sym(n, &mut rng);
            let e = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let s2 = rng.random_range(0.1..4.0);
            let lhs = martingale_terms(&g, &e, s2).unwrap().sum();
            let mut rhs = -s2 * g.trace();
            for i in 0..n {
                for j in 0..n {
                    rhs += e[i] * g[(i, j)] * e[j];
                }
            }
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
        assert!(martingale_terms(&DMatrix::zeros(2, 2), &DVector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn martingale_conditional_mean_zero() {
        let mut rng = rng_from_seed(12);
        let n = 8;
        let g = random_sym(n, &mut rng);
        let dist = ErrorDistribution::CenteredChiSquared4;
        let s2 = dist.raw_variance();
        let mut e = error_draw(dist, n, &mut rng);
        let i = 5;
        let reps = 100_000;
        let mut vals = Vec::with_capacity(reps);
        for _ in 0..reps {
            e[i] = error_draw(dist, 1, &mut rng)[0];
            vals.push(martingale_terms(&g, &e, s2).unwrap()[i]);
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean}, se {se}");
    }
}
