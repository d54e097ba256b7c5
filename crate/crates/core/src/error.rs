use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the library. The CLI maps the three broad classes
/// (config, data, numerical) onto distinct exit codes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: cannot parse date {value:?} (expected YYYYMM)")]
    DateParse { row: usize, value: String },
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    CellParse { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("duplicate date {0}")]
    DuplicateDate(u32),
    #[error("panel has no overlapping dates")]
    NoOverlap,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degrees of freedom {nu} must exceed {min}")]
    DegreesOfFreedom { nu: f64, min: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("cholesky factorization failed even after jitter")]
    Factorization,
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    #[error("coordinate descent did not converge in {sweeps} sweeps (kkt residual {kkt_residual:e})")]
    Convergence { sweeps: usize, kkt_residual: f64 },
    #[error("portfolio has zero variance{0}")]
    ZeroVariance(String),
    #[error("no investable portfolio: {0}")]
    Uninvested(String),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::DegreesOfFreedom { .. } => ErrorClass::Config,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::DateParse { .. }
            | Error::CellParse { .. }
            | Error::Ragged { .. }
            | Error::DuplicateDate(_)
            | Error::NoOverlap
            | Error::Dimension(_)
            | Error::Data(_) => ErrorClass::Data,
            Error::NotPsd { .. }
            | Error::Factorization
            | Error::Degenerate(_)
            | Error::Convergence { .. }
            | Error::ZeroVariance(_)
            | Error::Uninvested(_) => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
