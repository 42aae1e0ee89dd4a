//! Goodness-of-fit helpers for calibration studies.

/// Kolmogorov–Smirnov distance `sup |F_n(x) − F(x)|`. Infinite samples
/// count as mass at `+∞`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = if x.is_infinite() && x > 0.0 { 1.0 } else { cdf(x) };
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Fraction of the sample at or below `x`.
pub fn ecdf(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|v| **v <= x).count() as f64 / sample.len() as f64
}

/// Anderson–Darling `A²` against a fully specified continuous CDF.
pub fn anderson_darling(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut u: Vec<f64> = sample.iter().map(|x| cdf(*x).clamp(1e-300, 1.0 - 1e-16)).collect();
    u.sort_by(|a, b| a.total_cmp(b));
    let n = u.len();
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (u[i].ln() + (1.0 - u[n - 1 - i]).ln()))
        .sum();
    -nf - s / nf
}

/// Upper 1% critical value of `A²` for a fully specified null.
pub const AD_CRITICAL_1PCT: f64 = 3.857;

/// Sample quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if sorted[hi].is_infinite() || sorted[lo].is_infinite() {
        return if frac == 0.0 { sorted[lo] } else { sorted[hi] };
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_uniform_grid() {
        let s: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        let d = ks_distance(&s, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ks_counts_infinite_mass() {
        let s = vec![0.5, f64::INFINITY];
        let d = ks_distance(&s, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ad_small_for_uniform_grid_large_for_shifted() {
        let s: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(anderson_darling(&s, |x| x) < 0.1);
        let shifted: Vec<f64> = s.iter().map(|x| x * 0.5).collect();
        assert!(anderson_darling(&shifted, |x| x) > AD_CRITICAL_1PCT);
    }

    #[test]
    fn quantiles_and_ecdf() {
        let s = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!((quantile(&s, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(ecdf(&s, 2.0), 0.5);
    }
}
