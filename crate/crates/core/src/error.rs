use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("placement budget exhausted after {attempts} rejected samples; workspace too small for {requested} objects")]
    PlacementBudgetExhausted { attempts: usize, requested: usize },

    #[error("pixel ({u}, {v}) ray never meets the table plane")]
    HorizonRay { u: f64, v: f64 },

    #[error("heightmap geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pixel ({u}, {v}) outside {rows}x{cols} grid")]
    PixelOutOfRange {
        u: usize,
        v: usize,
        rows: usize,
        cols: usize,
    },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("malformed outcome: {0}")]
    MalformedOutcome(String),

    #[error("success-rate window contains no grasp attempts and no presented objects")]
    EmptyWindow,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
