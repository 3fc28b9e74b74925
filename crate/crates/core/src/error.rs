use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("empty curve set")]
    EmptyCurveSet,

    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("curve for `{model}` violates an invariant: {reason}")]
    InvalidCurve { model: String, reason: String },

    #[error("grid below one token")]
    GridBelowOneToken,

    #[error("point {index} of `{model}` (compute {compute:e}) lies outside the normalization range")]
    OutOfRange { model: String, index: usize, compute: f64 },

    #[error("ill-conditioned kernel")]
    IllConditionedKernel,

    #[error("optimizer failed on every restart")]
    OptimizerFailed,

    #[error("L(N,D) fit did not converge on any restart (best objective {best_objective:e})")]
    LndFitNotConverged {
        best_objective: f64,
        best: crate::synthgen::ChinchillaParams,
    },

    #[error("surrogate has not been trained")]
    Untrained,

    #[error("empty frontier")]
    EmptyFrontier,

    #[error("frontier not decreasing")]
    FrontierNotDecreasing,

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("curve source failed for `{model}`: {reason}")]
    CurveSource { model: String, reason: String },

    #[error("malformed curve file at line {line}: {reason}")]
    CurveFormat { line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error records and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::EmptyCurveSet => "empty_curve_set",
            Error::DuplicateModel(_) => "duplicate_model",
            Error::UnknownModel(_) => "unknown_model",
            Error::InvalidCurve { .. } => "invalid_curve",
            Error::GridBelowOneToken => "grid_below_one_token",
            Error::OutOfRange { .. } => "out_of_range",
            Error::IllConditionedKernel => "ill_conditioned_kernel",
            Error::OptimizerFailed => "optimizer_failed",
            Error::LndFitNotConverged { .. } => "lnd_fit_not_converged",
            Error::Untrained => "untrained",
            Error::EmptyFrontier => "empty_frontier",
            Error::FrontierNotDecreasing => "frontier_not_decreasing",
            Error::OracleUnavailable(_) => "oracle_unavailable",
            Error::CurveSource { .. } => "curve_source",
            Error::CurveFormat { .. } => "curve_format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
