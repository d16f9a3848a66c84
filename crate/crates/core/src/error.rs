use std::path::PathBuf;

/// Errors produced by the simulator, the safety layer, the agents and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid split action: {0}")]
    InvalidAction(String),

    #[error("invalid topology: {}", .0.join("; "))]
    InvalidTopology(Vec<String>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
