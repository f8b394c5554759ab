//! Error and warning types shared across the crate.

use crate::filter::SpatialParams;

/// Crate-wide error type.
///
/// Exit-code mapping for the CLI: usage errors are handled by the argument
/// parser (exit 1); [`Error::exit_code`] maps data problems to 2 and
/// numerical failures to 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A time slice (or a whole layout) has no usable reference value, so
    /// there is nothing to condition the spatial filter on.
    #[error("no reference data available{0}")]
    NoReferenceData(String),

    /// A covariance (Gram) matrix stayed non-positive-definite after the
    /// full jitter escalation ladder.
    #[error("covariance matrix is singular after {attempts} jitter escalations")]
    SingularCovariance { attempts: usize },

    /// A regression design has fewer rows than columns.
    #[error("underdetermined fit: {rows} rows for {cols} columns")]
    UnderdeterminedFit { rows: usize, cols: usize },

    /// A regression design is rank deficient (collinear columns).
    #[error("rank-deficient design matrix: rank {rank} < {cols} columns")]
    RankDeficientDesign { rank: usize, cols: usize },

    /// The spatial-parameter optimizer hit its iteration cap. The best point
    /// found is carried so callers can fall back to it.
    #[error("spatial MLE did not converge within {iters} iterations")]
    MleNotConverged {
        iters: usize,
        best: Box<SpatialParams>,
        loglik: f64,
    },

    /// The Pareto fit has too few exceedance records to be identifiable.
    #[error("insufficient exceedances: {found} found, {required} required")]
    InsufficientExceedances { found: usize, required: usize },

    /// An iterative fit produced a non-finite likelihood from every start.
    #[error("fit diverged: {0}")]
    FitDiverged(String),

    /// Input data violate a documented invariant (dimensions, roles,
    /// duplicate keys, non-finite values, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A CSV file could not be parsed; `line` is 1-based and includes the
    /// header line.
    #[error("{path}:{line}: {msg}")]
    CsvFormat {
        path: String,
        line: usize,
        msg: String,
    },

    /// A model file was written by an incompatible major format version.
    #[error("unsupported model format version {found} (supported major: {supported})")]
    ModelVersion { found: String, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 for data errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoReferenceData(_)
            | Error::InvalidInput(_)
            | Error::CsvFormat { .. }
            | Error::ModelVersion { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::SingularCovariance { .. }
            | Error::UnderdeterminedFit { .. }
            | Error::RankDeficientDesign { .. }
            | Error::MleNotConverged { .. }
            | Error::InsufficientExceedances { .. }
            | Error::FitDiverged(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Non-fatal diagnostic raised when an MCMC acceptance rate lands outside
/// (0.05, 0.95) after burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWarning {
    /// Which update the warning refers to (e.g. "spatial-params").
    pub target: String,
    /// Post-burn-in acceptance rate.
    pub acceptance: f64,
}

impl std::fmt::Display for MixingWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "poor mixing for {}: acceptance rate {:.3} outside (0.05, 0.95)",
            self.target, self.acceptance
        )
    }
}
