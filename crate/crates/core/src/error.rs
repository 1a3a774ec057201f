use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("track generation failed after {attempts} attempts: {reason}")]
    TrackGeneration { attempts: u32, reason: String },

    #[error("car is off-track (lateral offset {lateral:.3} m, half width {half_width:.3} m)")]
    OffTrack { lateral: f64, half_width: f64 },

    #[error("point is off-world ({distance:.1} m from the centerline)")]
    OffWorld { distance: f64 },

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    Shape {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("weight container is corrupt: {0}")]
    CorruptContainer(String),

    #[error("parameter {name}: {reason}")]
    ParameterMismatch { name: String, reason: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error("image error: {0}")]
    Image(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("insufficient source data: {0}")]
    Shortfall(String),

    #[error("{path}: {source}")]
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
