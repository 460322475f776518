//! Session service: a WebSocket front end over the session engine for the
//! participant board client and the assessor console.

pub mod hub;
pub mod protocol;
pub mod server;

pub use hub::{Clock, Connection, Hub, ManualClock, SystemClock};
pub use server::{router, serve, serve_on, spawn};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot listen: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Session(#[from] cogmap_core::session::SessionError),
    #[error(transparent)]
    Storage(#[from] cogmap_core::storage::StorageError),
}
