//! Error taxonomy shared by the whole pipeline.

use thiserror::Error;

/// Errors produced by trajectory I/O, generators and the decomposition stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file contents: bad magic, wrong version, truncated payload,
    /// schema violations in model JSON.
    #[error("format error: {0}")]
    Format(String),

    /// Layer spans that do not tile the row range.
    #[error("layer index error: {0}")]
    LayerIndex(String),

    /// Non-finite values or shape mismatches in otherwise well-formed data.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// A generated trajectory blew past the divergence threshold.
    #[error("divergence at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// Degenerate inputs: too few nonconstant rows, zero-variance
    /// trajectories where a correlation is required, singular reference fits.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Numerical failure inside a factorization.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
