use std::path::PathBuf;

use crate::image::Domain;

/// Errors produced by the ISP search library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain mismatch in {op}: expected {expected:?}, got {got:?}")]
    Domain {
        op: String,
        expected: Domain,
        got: Domain,
    },

    #[error("non-finite values produced by {op}")]
    NonFinite { op: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown module id `{0}`")]
    UnknownModule(String),

    #[error("failed to parse {what} at byte {offset}: {detail}")]
    Parse {
        what: &'static str,
        offset: usize,
        detail: String,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("weights for `{0}` are not loaded")]
    MissingWeights(String),

    #[error("training diverged for `{module}` at step {step}")]
    Diverged { module: String, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by the user's configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownModule(_) | Error::Domain { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
