use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid thermal parameters: {0}")]
    InvalidThermalParams(String),

    #[error("thermal network is not grounded: node {node} has no conductive path to ambient")]
    Ungrounded { node: usize },

    #[error("model is not asymptotically stable: {0}")]
    Unstable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unusable normalization: state component {index} has zero steady-state response")]
    UnreachableState { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
