use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("requested {requested} values exceeds the memory cap of {cap}")]
    MemoryCap { requested: usize, cap: usize },

    #[error("exact assignment limited to {cap} samples, got {n}; use the coupled bound")]
    AssignmentCap { n: usize, cap: usize },

    #[error("rank-deficient regression design for player {player} at step {step}")]
    RankDeficient { player: usize, step: usize },

    #[error("grid too coarse: total jump probability {mass:.4} at step {step} exceeds 0.5")]
    GridTooCoarse { step: usize, mass: f64 },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
