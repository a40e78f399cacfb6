use std::io;

use thiserror::Error;

use crate::grid::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs of an operation does not hold.
    #[error("{0}")]
    Domain(String),

    /// A structured input (grid file, stats file, config) is malformed.
    #[error("invalid `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("node {0} is not part of this network")]
    UnknownNode(NodeId),

    #[error("no spanning tree with a degree-one root exists: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Reconstruction(Box<crate::hidden::ReconstructionFailure>),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Schema { .. } => "schema",
            Error::UnknownNode(_) => "unknown_node",
            Error::Infeasible(_) => "infeasible",
            Error::Reconstruction(_) => "reconstruction_failure",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
