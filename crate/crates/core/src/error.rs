use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::DiffError;
use crate::bvh::BvhError;
use crate::rotation::RotationError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame {frame}, joint {joint}: {source}")]
    Rotation { frame: usize, joint: usize, source: RotationError },
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{op} needs at least {need} frames, got {got}")]
    TooShort { op: &'static str, need: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Bvh { path: PathBuf, source: BvhError },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged at step {step}: {detail}; last good checkpoint: {}", last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Diverged { step: u64, detail: String, last_good: Option<PathBuf> },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
