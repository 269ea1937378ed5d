//! Local-socket message layer standing in for MPI point-to-point messaging.
//!
//! All inter-rank traffic (ghost exchange, steering fan-out, compositing)
//! runs over [`Link`]s: ordered, reliable byte streams between two ranks.

mod link;
mod mesh;
pub mod wire;

pub use link::{Link, LinkReceiver, LinkSender};
pub use mesh::{socket_path, Mesh};
pub(crate) use mesh::{connect_with_retry, read_hello, send_hello};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out waiting for rank {peer}")]
    Timeout { peer: usize },
    #[error("rank {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("no link to rank {peer}")]
    NoSuchPeer { peer: usize },
    #[error("run configuration checksum differs from rank {peer}")]
    ConfigMismatch { peer: usize },
    #[error("rendezvous failed: {0}")]
    Rendezvous(String),
    #[error("bad magic: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    #[error("message truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
}
