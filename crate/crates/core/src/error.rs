use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaqlError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid box domain: {0}")]
    InvalidBox(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("LP solver numerical failure: {0}")]
    Numerical(String),

    #[error("max-Q solve failed for sample {index}: {source}")]
    Solver {
        index: usize,
        #[source]
        source: Box<CaqlError>,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = CaqlError> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(CaqlError::Dimension {
            context,
            expected,
            actual,
        })
    }
}
