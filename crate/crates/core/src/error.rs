use std::path::PathBuf;

use crate::logistic::FailureKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("MLE fit did not converge ({kind:?} after {iterations} iterations, |grad| = {grad_norm:.3e})")]
    NotConverged {
        kind: FailureKind,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("separability could not be decided: {0}")]
    Indeterminate(String),

    #[error("fixed-point solver failed for kappa = {kappa}, gamma = {gamma}: {reason}; check that (kappa, gamma) lies below the existence frontier")]
    FixedPoint { kappa: f64, gamma: f64, reason: String },

    #[error("frontier: {0}")]
    Frontier(String),

    #[error("the data are linearly separable: the MLE does not exist and gamma is not estimable")]
    SeparableData,

    #[error("separability fraction never reached the crossing target on the kappa grid; extend kappa_grid")]
    ProbeGridExhausted,

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
