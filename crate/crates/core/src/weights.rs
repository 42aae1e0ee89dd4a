//! Spatial weight matrices.
//!
//! Matrices are stored densely. Grid units are numbered in row-major order,
//! so cell `(r, c)` of an `R×C` grid is unit `r·C + c`. Triplet files use
//! 1-based indices; everything in memory is 0-based.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const STANDARDIZED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: DMatrix<f64>,
    standardized: bool,
}

/// On-disk layouts accepted by [`load_weights`] and [`save_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFormat {
    /// `n` lines of `n` comma-separated reals.
    DenseCsv,
    /// Header `n=<int>` then `i,j,value` lines with 1-based indices.
    TripletCsv,
}

impl std::str::FromStr for WeightFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "dense" => Ok(WeightFormat::DenseCsv),
            "triplet-csv" | "triplet" => Ok(WeightFormat::TripletCsv),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight format `{other}` (expected dense-csv or triplet-csv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightWarning {
    /// Row `row` (0-based) has no neighbours.
    ZeroRow { row: usize },
    /// A nonzero diagonal entry was read from file and replaced by zero.
    DiagonalCleared { index: usize, value: f64 },
}

impl std::fmt::Display for WeightWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightWarning::ZeroRow { row } => write!(f, "row {} has no neighbours", row + 1),
            WeightWarning::DiagonalCleared { index, value } => {
                write!(f, "diagonal entry ({0},{0}) = {value} forced to 0", index + 1)
            }
        }
    }
}

/// Summary produced by [`validate_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    pub n: usize,
    pub max_abs_row_sum: f64,
    pub max_abs_col_sum: f64,
    pub zero_rows: usize,
    pub symmetric: bool,
    pub standardized: bool,
}

impl WeightMatrix {
    /// Wraps a dense matrix after checking the weight-matrix invariants
    /// (square, finite, nonnegative, zero diagonal).
    pub fn from_dense(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidArgument("weight matrix is empty".into()));
        }
        for ((i, j), v) in values.iter().enumerate().map(|(idx, v)| {
            let n = values.nrows();
            ((idx % n, idx / n), *v)
        }) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) = {v} must be finite and nonnegative",
                    i + 1,
                    j + 1
                )));
            }
            if i == j && v != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "diagonal entry ({0}, {0}) = {v} must be zero",
                    i + 1
                )));
            }
        }
        Ok(WeightMatrix {
            values,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.row_iter().map(|r| r.sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.values[(i, j)] == self.values[(j, i)]))
    }

    /// Applies a relabelling of units: unit `perm[i]` of `self` becomes unit `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {n} units",
                perm.len()
            )));
        }
        let values = DMatrix::from_fn(n, n, |i, j| self.values[(perm[i], perm[j])]);
        Ok(WeightMatrix {
            values,
            standardized: self.standardized,
        })
    }
}

/// Binary queen-contiguity matrix on a `rows × cols` grid.
pub fn build_grid_queen(rows: usize, cols: usize) -> Result<WeightMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let n = rows * cols;
    if n < 2 {
        return Err(Error::InvalidArgument("a grid needs at least two cells".into()));
    }
    let mut values = DMatrix::zeros(n, n);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    values[(i, nr as usize * cols + nc as usize)] = 1.0;
                }
            }
        }
    }
    Ok(WeightMatrix {
        values,
        standardized: false,
    })
}

/// Divides each row by its sum. Rows that sum to zero are left as they are
/// and returned in the diagnostic list (0-based row indices).
pub fn row_standardize(w: &WeightMatrix) -> (WeightMatrix, Vec<WeightWarning>) {
    let mut values = w.values.clone();
    let mut warnings = Vec::new();
    for (i, mut row) in values.row_iter_mut().enumerate() {
        let s: f64 = row.sum();
        if s == 0.0 {
            warnings.push(WeightWarning::ZeroRow { row: i });
        } else {
            row /= s;
        }
    }
    (
        WeightMatrix {
            values,
            standardized: true,
        },
        warnings,
    )
}

/// Block-diagonal `I_blocks ⊗ W`.
pub fn kronecker_pool(blocks: usize, w: &WeightMatrix) -> Result<WeightMatrix> {
    if blocks == 0 {
        return Err(Error::InvalidArgument("pool needs at least one block".into()));
    }
    let m = w.n();
    let n = blocks * m;
    let mut values = DMatrix::zeros(n, n);
    for b in 0..blocks {
        values.view_mut((b * m, b * m), (m, m)).copy_from(&w.values);
    }
    Ok(WeightMatrix {
        values,
        standardized: w.standardized,
    })
}

pub fn validate_weights(w: &WeightMatrix) -> WeightReport {
    let max_abs_row_sum = w
        .values
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let max_abs_col_sum = w
        .values
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let zero_rows = w.values.row_iter().filter(|r| r.iter().all(|v| *v == 0.0)).count();
    let standardized = w
        .values
        .row_iter()
        .map(|r| r.sum())
        .all(|s| s == 0.0 || (s - 1.0).abs() <= STANDARDIZED_TOL);
    WeightReport {
        n: w.n(),
        max_abs_row_sum,
        max_abs_col_sum,
        zero_rows,
        symmetric: w.is_symmetric(),
        standardized,
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_real(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format_err(path, line, format!("cannot parse `{}` as a number", field.trim())))?;
    if !v.is_finite() {
        return Err(format_err(path, line, format!("non-finite value `{}`", field.trim())));
    }
    if v < 0.0 {
        return Err(format_err(path, line, format!("negative weight {v}")));
    }
    Ok(v)
}

/// Parses weight-matrix text. `path` is only used to label errors.
pub fn parse_weights(text: &str, format: WeightFormat, path: &Path) -> Result<(WeightMatrix, Vec<WeightWarning>)> {
    let lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let mut values = match format {
        WeightFormat::DenseCsv => {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut last_line = 0;
            for (lineno, line) in lines {
                let row = line
                    .split(',')
                    .map(|f| parse_real(path, lineno, f))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(first) = rows.first() {
                    if row.len() != first.len() {
                        return Err(format_err(
                            path,
                            lineno,
                            format!("expected {} fields, found {}", first.len(), row.len()),
                        ));
                    }
                }
                rows.push(row);
                last_line = lineno;
            }
            let n = rows.len();
            if n == 0 {
                return Err(format_err(path, 1, "no matrix rows"));
            }
            if rows[0].len() != n {
                return Err(format_err(
                    path,
                    last_line,
                    format!("matrix is not square: {n} rows of {} columns", rows[0].len()),
                ));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        WeightFormat::TripletCsv => {
            let mut lines = lines;
            let (hline, header) = lines
                .next()
                .ok_or_else(|| format_err(path, 1, "missing `n=<int>` header"))?;
            let n: usize = header
                .strip_prefix("n=")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| format_err(path, hline, format!("expected `n=<int>`, found `{header}`")))?;
            if n == 0 {
                return Err(format_err(path, hline, "n must be positive"));
            }
            let mut m = DMatrix::zeros(n, n);
            for (lineno, line) in lines {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 3 {
                    return Err(format_err(
                        path,
                        lineno,
                        format!("expected `i,j,value`, found {} fields", fields.len()),
                    ));
                }
                let index = |f: &str| -> Result<usize> {
                    let i: usize = f
                        .trim()
                        .parse()
                        .map_err(|_| format_err(path, lineno, format!("cannot parse index `{}`", f.trim())))?;
                    if i == 0 || i > n {
                        return Err(format_err(path, lineno, format!("index {i} out of range 1..={n}")));
                    }
                    Ok(i - 1)
                };
                let (i, j) = (index(fields[0])?, index(fields[1])?);
                m[(i, j)] = parse_real(path, lineno, fields[2])?;
            }
            m
        }
    };

    let mut warnings = Vec::new();
    for i in 0..values.nrows() {
        let d = values[(i, i)];
        if d != 0.0 {
            log::warn!("{}: diagonal entry ({0},{0}) = {d} forced to 0", path.display());
            warnings.push(WeightWarning::DiagonalCleared { index: i, value: d });
            values[(i, i)] = 0.0;
        }
    }
    let w = WeightMatrix::from_dense(values)?;
    Ok((w, warnings))
}

pub fn load_weights(path: &Path, format: WeightFormat) -> Result<(WeightMatrix, Vec<WeightWarning>)> {
    let text = fs::read_to_string(path)?;
    parse_weights(&text, format, path)
}

/// Serializes with Rust's shortest round-trip float formatting, so dense
/// output reloads bit-exactly.
pub fn format_weights(w: &WeightMatrix, format: WeightFormat) -> String {
    let n = w.n();
    let mut out = String::new();
    match format {
        WeightFormat::DenseCsv => {
            for i in 0..n {
                for j in 0..n {
                    if j > 0 {
                        out.push(',');
                    }
                    write!(out, "{}", w.values[(i, j)]).unwrap();
                }
                out.push('\n');
            }
        }
        WeightFormat::TripletCsv => {
            writeln!(out, "n={n}").unwrap();
            for i in 0..n {
                for j in 0..n {
                    let v = w.values[(i, j)];
                    if v != 0.0 {
                        writeln!(out, "{},{},{}", i + 1, j + 1, v).unwrap();
                    }
                }
            }
        }
    }
    out
}

pub fn save_weights(w: &WeightMatrix, path: &Path, format: WeightFormat) -> Result<()> {
    crate::io::write_atomic(path, &format_weights(w, format))?;
    Ok(())
}
