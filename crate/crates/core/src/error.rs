use thiserror::Error;

/// Failures that can occur at runtime. Contract violations (mismatched sizes,
/// out-of-range arguments) panic instead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Krylov propagation did not converge: residual estimate {residual:.3e} at subspace dimension {dim}")]
    KrylovNotConverged { residual: f64, dim: usize },

    #[error("state norm drifted to {norm} during evolution")]
    NormDrift { norm: f64 },

    #[error("jackknife needs at least 2 bins, got {bins}")]
    TooFewBins { bins: usize },

    #[error("second magnetization moment is zero; Binder cumulant undefined")]
    ZeroSecondMoment,

    #[error("no initial state with finite weight after {attempts} draws")]
    NoFiniteInitialState { attempts: usize },

    #[error("{method} evolution supports at most {max} sites, model has {sites}")]
    TooManySites {
        method: &'static str,
        max: usize,
        sites: usize,
    },

    #[error("malformed CSV input: {0}")]
    Csv(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
