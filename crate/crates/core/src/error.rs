// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("weight blob is {actual} bytes, manifest declares {expected}")]
    BlobLength { expected: usize, actual: usize },

    #[error("weight checksum mismatch: manifest says {expected}, blob hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("feature extraction failed: {0}")]
    Extraction(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
