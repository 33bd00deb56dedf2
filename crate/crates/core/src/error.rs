//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero quaternion cannot be normalized")]
    ZeroQuaternion,

    #[error("temporal mode not enabled: primitive has no temporal weights")]
    TemporalNotEnabled,

    #[error("image shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("quadrature max depth exceeded (achieved tolerance {achieved:.3e}, requested {requested:.3e})")]
    QuadratureDepth { achieved: f64, requested: f64 },

    #[error("empty point list")]
    EmptyPoints,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty test split")]
    EmptyTestSplit,

    #[error("population control would empty the scene")]
    SceneEmptied,

    #[error("invalid configuration: {msg}")]
    Config { msg: String },

    #[error("non-finite loss at iteration {iter}")]
    NanLoss { iter: u64 },

    #[error("{path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("checkpoint error at byte {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },

    #[error("malformed point file {path}: {msg}")]
    PointFile { path: PathBuf, msg: String },

    #[error("camera file {path}, line {line}: {msg}")]
    CameraFile { path: PathBuf, line: usize, msg: String },

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
