use thiserror::Error;

use crate::data::DataError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate endpoint accuracy at alpha = {alpha}: interpolated denominator is zero")]
    DegenerateEndpoint { alpha: f64 },

    #[error("degenerate basis: points are collinear")]
    DegenerateBasis,

    #[error("evaluation failed at alpha = {alpha}: {source}")]
    AtAlpha {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("client {client} failed: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        }
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Json(_) => ErrorClass::Config,
            Error::NonFinite { .. }
            | Error::Diverged { .. }
            | Error::DegenerateEndpoint { .. }
            | Error::DegenerateBasis => ErrorClass::Numeric,
            Error::EmptyDataset | Error::Data(_) | Error::Io(_) => ErrorClass::Data,
            Error::AtAlpha { source, .. } | Error::Client { source, .. } => source.class(),
        }
    }
}
