// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad classification of failures, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent user input.
    Input,
    /// A well-formed request that cannot be satisfied.
    Infeasible,
    /// An internal invariant was violated.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: field `{field}`: {message}")]
    Row { row: usize, field: String, message: String },

    #[error("duplicate case_id `{case_id}` at rows {first_row} and {second_row}")]
    DuplicateCaseId {
        case_id: String,
        first_row: usize,
        second_row: usize,
    },

    #[error("row {row}: unknown stratum_id `{stratum_id}`")]
    UnknownStratum { row: usize, stratum_id: String },

    #[error("case `{case_id}` has no score")]
    MissingScore { case_id: String },

    #[error("case `{case_id}` has no predicted label")]
    MissingPrediction { case_id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("config hash mismatch: sheet has {found}, sample has {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Infeasible(_) => ErrorKind::Infeasible,
            Error::Internal(_) => ErrorKind::Internal,
            _ => ErrorKind::Input,
        }
    }

    pub(crate) fn row(row: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Row {
            row,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
