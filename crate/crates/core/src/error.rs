use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is numerically singular (pivot {pivot:e} at column {index})")]
    Singular { index: usize, pivot: f64 },

    #[error("determinant of A(rho) is not positive (sign {sign})")]
    NonPositiveDeterminant { sign: f64 },

    #[error("inconsistent fit: LR statistic {0:e} is below the clamp threshold")]
    InconsistentFit(f64),

    #[error("maximum likelihood fit did not converge")]
    NotConverged,

    #[error("format error in {path}, line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag used by the command-line driver.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::Singular { .. } => "singular",
            Error::NonPositiveDeterminant { .. } => "nonpositive-determinant",
            Error::InconsistentFit(_) => "inconsistent-fit",
            Error::NotConverged => "not-converged",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// Numerical failures, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonPositiveDeterminant { .. }
                | Error::InconsistentFit(_)
                | Error::NotConverged
        )
    }
}
