//! Head-node streaming of composited frames to remote clients, and the
//! client messages that come back.

mod client;
mod frame;
mod latency;
mod messages;
mod server;

pub use client::StreamClient;
pub use frame::{
    encode_frame, encode_payload, frame_header, rle_decode, rle_encode, Encoding, FrameImage, FrameMessage,
    FRAME_HEADER_LEN, FRAME_MAGIC,
};
pub use latency::{LatencyTracker, DEFAULT_ECHO_STALE};
pub use messages::{
    ClientMessage, ClientParser, Echo, ServerMessage, StatsMessage, SteerResponse, ECHO_LEN, ECHO_MAGIC,
    RESPONSE_MAGIC, STATS_MAGIC,
};
pub use server::{ClientCounters, ClientId, Inbound, ServerConfig, StreamServer};

use thiserror::Error;

use crate::net::NetError;
use crate::render::RenderError;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("cannot listen on {0}")]
    Bind(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stream protocol error: {0}")]
    Protocol(String),
    #[error("timed out")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl From<std::io::Error> for StreamError {
    fn from(e: std::io::Error) -> Self {
        StreamError::Net(NetError::Io(e))
    }
}
