//! Per-rank process composition: simulation → shared memory → renderer →
//! compositor on every rank, plus streaming and steering on the head.

mod bench;
mod launch;
mod params;
mod rank;
mod spec;

pub use bench::{mean_stdev, opaque_traffic, BenchReport, TARGET_FPS, TARGET_REPROJECT_MS};
pub use launch::{
    connect_rank, rank_main, read_reports, report_path, run_in_process, Launch, CONNECT_TIMEOUT, ENDPOINT_FILE,
    SPEC_FILE,
};
pub use params::{FrameParams, VizState, FRAME_PARAMS_LEN, FRAME_PARAMS_MAGIC};
pub use rank::{run_rank, RankReport, RankWiring, Submission};
pub use spec::{BenchSpec, RunSpec};

use thiserror::Error;

use crate::composite::CompositeError;
use crate::net::NetError;
use crate::render::RenderError;
use crate::shmem::ShmError;
use crate::sim::SimError;
use crate::steer::SteerError;
use crate::stream::StreamError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("run configuration: {0}")]
    Config(String),
    #[error("rank {rank} failed: {reason}")]
    RankFailed { rank: usize, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error(transparent)]
    Steer(#[from] SteerError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
