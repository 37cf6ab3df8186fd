use std::path::PathBuf;

use thiserror::Error;

use crate::sensing::NodeId;

#[derive(Debug, Error)]
pub enum DtseError {
    #[error("{quantity} = {value} is outside its domain ({expected})")]
    Domain {
        quantity: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("CFL condition violated: v_f*dt/dh = {ratio:.4} (must be < 1)")]
    Cfl { ratio: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("numerical failure at node {node}, step {step}: {what}")]
    Numerical {
        node: NodeId,
        step: usize,
        what: String,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cell index {cell} out of range for {n_cells} cells")]
    CellOutOfRange { cell: usize, n_cells: usize },

    #[error("CSV error on {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DtseError> = std::result::Result<T, E>;

impl DtseError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DtseError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        DtseError::Csv {
            path: path.into(),
            source,
        }
    }
}
