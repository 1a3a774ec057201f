//! Real-time session server: one authoritative simulator loop, WebSocket
//! streaming of camera frames and car state, human steering input and
//! demonstration recording.

pub mod protocol;
pub mod server;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use protocol::{decode_frame, encode_frame, ClientMsg, ServerMsg, FRAME_MAGIC};
pub use server::{serve, start, ServerHandle};
pub use session::{replay, ControlMsg, Session, SessionConfig, StateMsg, TickOutput};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fsd_core::Error),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

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
}
