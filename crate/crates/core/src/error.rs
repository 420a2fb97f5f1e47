use std::io;

use thiserror::Error;

use crate::retrieve::Diagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("could not decode image: {0}")]
    Decode(String),

    #[error("invalid crop: {0}")]
    InvalidCrop(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("load error at record {record}: {reason}")]
    Load { record: u64, reason: String },

    #[error("training diverged ({0}); try a smaller learning rate")]
    Divergence(String),

    #[error("corrupt code: id {id} in subspace {subspace} exceeds codebook size {k}")]
    CorruptCode { subspace: usize, id: u8, k: usize },

    #[error("integrity error in shard {shard}: {reason}")]
    Integrity { shard: u32, reason: String },

    #[error("index format error: {0}")]
    Format(String),

    #[error("build error: {0}")]
    Build(String),

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("unknown document {0}")]
    UnknownDoc(u64),

    #[error("every shard missed the deadline")]
    AllShardsTimedOut(Box<Diagnostics>),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimMismatch { expected, got }
    }
}
