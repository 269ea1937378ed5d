//! Sort-last compositing of per-rank renderings by binary swap.

mod fragment;
mod swap;

use thiserror::Error;

use crate::net::NetError;
use crate::render::RenderError;

pub use fragment::{composite_depth_pair, merge_vdi_pair, Composite, VdiLists, DEPTH_PIXEL_SIZE};
pub use swap::{
    binary_swap, composite_frame, gather, CompositeTopology, SwapStats, DEFAULT_STAGE_TIMEOUT,
    GATHER_STAGE, SWAP_HEADER_LEN, SWAP_MAGIC,
};

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("compositing protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<RenderError> for CompositeError {
    fn from(e: RenderError) -> Self {
        CompositeError::InvalidArgument(e.to_string())
    }
}
