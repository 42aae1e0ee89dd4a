//! Chi-squared quantiles by inverting the regularized incomplete gamma
//! function.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-12;

/// `P(χ²_df ≤ x)`.
pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

fn chi2_sf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

fn chi2_ln_pdf(df: usize, x: f64) -> f64 {
    let k = df as f64 / 2.0;
    (k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)
}

/// `z` with `P(χ²_df ≤ z) = alpha`.
///
/// Safeguarded Newton iteration inside a shrinking bracket. Works on the
/// upper tail when `alpha > 1/2` so that quantiles close to one keep their
/// relative accuracy.
pub fn chi2_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidArgument("chi-squared needs df >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let upper = alpha > 0.5;
    // f(x) increasing in x, root at the quantile
    let f = |x: f64| {
        if upper {
            (1.0 - alpha) - chi2_sf(df, x)
        } else {
            chi2_cdf(df, x) - alpha
        }
    };

    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chi2_ln_pdf(df, x).exp();
        let mut next = x - fx / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= REL_TOL * next.abs() || hi - lo <= REL_TOL * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
