use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("template {template_w}x{template_h} does not fit inside prior {prior_w}x{prior_h}")]
    Dimension {
        template_w: usize,
        template_h: usize,
        prior_w: usize,
        prior_h: usize,
    },

    #[error("resolution mismatch: template {template} m/cell, prior {prior} m/cell")]
    ResolutionMismatch { template: f64, prior: f64 },

    #[error("covariance is not symmetric positive semidefinite: {0:?}")]
    NotPsd([[f64; 2]; 2]),

    #[error("empty series")]
    EmptySeries,

    #[error("config: {0}")]
    Config(String),

    #[error("unknown mission event `{0}`")]
    UnknownEvent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
