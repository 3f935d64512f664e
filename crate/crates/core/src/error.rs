use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: corners must satisfy x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("detections {0} and {1} come from the same detector; grouping is cross-detector only")]
    SameDetector(u32, u32),

    #[error("softmin of an empty set")]
    EmptySoftmin,

    #[error("box has a zero-length side")]
    DegenerateBox,

    #[error("spatial model: {0}")]
    Spatial(String),

    #[error("non-finite energy at the initial solution")]
    NonFiniteEnergy,

    #[error("frame count mismatch: {tracks} track frames vs {truth} ground-truth frames")]
    FrameMismatch { tracks: usize, truth: usize },

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
