//! Dense factorizations and log-determinant backends.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, LU};

use crate::error::{Error, Result};
use crate::weights::WeightMatrix;

/// Relative pivot threshold: a pivot below `PIVOT_TOL · max|a_ij|` is singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// LU factorization with partial pivoting that has passed the pivot check.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let scale = a.amax();
        let lu = a.lu();
        {
            let u = lu.u();
            for i in 0..n {
                let p = u[(i, i)];
                if !(p.abs() > PIVOT_TOL * scale) {
                    return Err(Error::Singular { index: i, pivot: p });
                }
            }
        }
        Ok(LuFactor { lu, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("pivots checked at construction")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("pivots checked at construction")
    }

    /// `(log|det|, sign(det))` from the pivots and the row permutation parity.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let u = self.lu.u();
        let mut sign = self.lu.p().determinant::<f64>();
        let mut log = 0.0;
        for i in 0..self.n {
            let p = u[(i, i)];
            if p < 0.0 {
                sign = -sign;
            }
            log += p.abs().ln();
        }
        (log, sign)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.lu.try_inverse().expect("pivots checked at construction")
    }
}

/// `log|I − ρW|` on the connected component containing `ρ = 0`.
pub trait LogDetStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn log_det(&self, rho: f64) -> Result<f64>;
}

/// Factorizes `I − ρW` at every call.
pub struct LuLogDet {
    w: DMatrix<f64>,
}

impl LuLogDet {
    pub fn new(w: &WeightMatrix) -> Self {
        LuLogDet { w: w.values().clone() }
    }
}

impl LogDetStrategy for LuLogDet {
    fn name(&self) -> &'static str {
        "lu"
    }

    fn log_det(&self, rho: f64) -> Result<f64> {
        let n = self.w.nrows();
        let a = DMatrix::identity(n, n) - &self.w * rho;
        let (log, sign) = LuFactor::new(a)?.log_abs_det();
        if sign <= 0.0 {
            return Err(Error::NonPositiveDeterminant { sign });
        }
        Ok(log)
    }
}

/// `Σ log(1 − ρ μ_i)` over the eigenvalues of `W`, computed once.
///
/// Only available when `W` is diagonally similar to a symmetric matrix,
/// which covers symmetric weights and row-standardized symmetric weights.
pub struct SpectralLogDet {
    eigenvalues: Vec<f64>,
}

impl SpectralLogDet {
    /// Returns `None` when `W` is not symmetrizable by a diagonal similarity.
    pub fn try_new(w: &WeightMatrix) -> Option<Self> {
        let s = symmetrize_by_scaling(w.values())?;
        let eig = SymmetricEigen::new(s);
        Some(SpectralLogDet {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

impl LogDetStrategy for SpectralLogDet {
    fn name(&self) -> &'static str {
        "spectral"
    }

    fn log_det(&self, rho: f64) -> Result<f64> {
        let mut log = 0.0;
        for (i, mu) in self.eigenvalues.iter().enumerate() {
            let f = 1.0 - rho * mu;
            if f <= PIVOT_TOL {
                if f.abs() <= PIVOT_TOL {
                    return Err(Error::Singular { index: i, pivot: f });
                }
                return Err(Error::NonPositiveDeterminant { sign: -1.0 });
            }
            log += f.ln();
        }
        Ok(log)
    }
}

/// Picks a log-determinant backend by name: `lu`, `spectral`, or `auto`
/// (spectral when the weights allow it, LU otherwise).
pub fn logdet_by_name(name: &str, w: &WeightMatrix) -> Result<Box<dyn LogDetStrategy>> {
    match name {
        "lu" => Ok(Box::new(LuLogDet::new(w))),
        "spectral" => SpectralLogDet::try_new(w)
            .map(|s| Box::new(s) as Box<dyn LogDetStrategy>)
            .ok_or_else(|| {
                Error::InvalidArgument("spectral log-determinant needs weights similar to a symmetric matrix".into())
            }),
        "auto" => Ok(match SpectralLogDet::try_new(w) {
            Some(s) => Box::new(s),
            None => Box::new(LuLogDet::new(w)),
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown log-determinant method `{other}` (expected lu, spectral or auto)"
        ))),
    }
}

/// Finds `D` with `D W D⁻¹` symmetric and returns that symmetric matrix.
fn symmetrize_by_scaling(w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = w.nrows();
    for i in 0..n {
        for j in 0..i {
            if (w[(i, j)] == 0.0) != (w[(j, i)] == 0.0) {
                return None;
            }
        }
    }
    // d_i / d_j = sqrt(w_ji / w_ij) along every edge; propagate over each
    // connected component.
    let mut d = vec![f64::NAN; n];
    let mut stack = Vec::new();
    for root in 0..n {
        if !d[root].is_nan() {
            continue;
        }
        d[root] = 1.0;
        stack.push(root);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let wij = w[(i, j)];
                if wij != 0.0 && d[j].is_nan() {
                    d[j] = d[i] / (w[(j, i)] / wij).sqrt();
                    stack.push(j);
                }
            }
        }
    }
    let s = DMatrix::from_fn(n, n, |i, j| (w[(i, j)] * w[(j, i)]).sqrt());
    let scale = w.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..n {
            let t = d[i] * w[(i, j)] / d[j];
            if (t - s[(i, j)]).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    Some(s)
}

/// `S^{-1/2}` for a symmetric positive semidefinite `S`, flooring eigenvalues
/// at `1e-12 · λ_max`.
pub fn sym_inv_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * lmax;
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.max(floor).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetric eigenvalues in ascending order.
pub fn sym_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}
