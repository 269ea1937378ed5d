//! Lock-free single-writer snapshot channel over named POSIX shared memory.
//!
//! The writer brackets each snapshot with generation increments (odd while
//! writing); a reader copies or consumes the payload and keeps the result
//! only if it saw the same even generation before and after. Neither side
//! ever waits for the other.

mod header;
mod reader;
mod segment;
mod writer;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

pub use header::{
    bytes_needed, grown_capacity, SegmentHeader, FLAG_SUPERSEDED, FLAG_TERMINATED, HEADER_LEN,
    LAYOUT_VERSION, MAGIC, RECORD_LEN,
};
pub use reader::{Acquire, AcquireResult, FollowingReader, PayloadView, SegmentReader};
pub use writer::{PublishOutcome, SegmentWriter};

pub const DEFAULT_SCOPE: &str = "insitu";
pub const DEFAULT_READ_RETRIES: u32 = 16;
pub const DEFAULT_REAP_TIMEOUT: Duration = Duration::from_secs(5);

const SHM_DIR: &str = "/dev/shm";

#[derive(Debug, Error)]
pub enum ShmError {
    #[error("capacity {0} is below the header plus one record")]
    CapacityTooSmall(u64),
    #[error("segment {0} already exists")]
    Exists(SegmentName),
    #[error("segment {0} not found")]
    NotFound(SegmentName),
    #[error("incompatible segment: {0}")]
    Incompatible(String),
    #[error("shared memory: {0}")]
    Resource(String),
    #[error("bad segment name {0:?}")]
    BadName(String),
}

/// Name of one shared-memory object: `{scope}.r{rank}.e{epoch}`.
///
/// The scope is `insitu` for normal runs; tests and concurrent runs use
/// their own so they cannot collide.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentName {
    pub scope: String,
    pub rank: u32,
    pub epoch: u32,
}

impl SegmentName {
    pub fn new(scope: &str, rank: u32, epoch: u32) -> Self {
        Self {
            scope: scope.to_string(),
            rank,
            epoch,
        }
    }

    pub fn default_scope(rank: u32, epoch: u32) -> Self {
        Self::new(DEFAULT_SCOPE, rank, epoch)
    }

    pub fn with_epoch(&self, epoch: u32) -> Self {
        Self {
            epoch,
            ..self.clone()
        }
    }
}

impl fmt::Display for SegmentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.r{}.e{}", self.scope, self.rank, self.epoch)
    }
}

impl FromStr for SegmentName {
    type Err = ShmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_start_matches('/');
        let bad = || ShmError::BadName(s.to_string());
        let (rest, epoch) = s.rsplit_once(".e").ok_or_else(bad)?;
        let (scope, rank) = rest.rsplit_once(".r").ok_or_else(bad)?;
        if scope.is_empty() || scope.contains('/') {
            return Err(bad());
        }
        Ok(SegmentName {
            scope: scope.to_string(),
            rank: rank.parse().map_err(|_| bad())?,
            epoch: epoch.parse().map_err(|_| bad())?,
        })
    }
}

/// Every live segment in `scope`, sorted by rank then epoch.
pub fn list_segments(scope: &str) -> Vec<SegmentName> {
    let Ok(entries) = std::fs::read_dir(SHM_DIR) else {
        return Vec::new();
    };
    let mut names: Vec<SegmentName> = entries
        .flatten()
        .filter_map(|e| e.file_name().to_str()?.parse::<SegmentName>().ok())
        .filter(|n| n.scope == scope)
        .collect();
    names.sort();
    names
}

/// Unlinks every segment in `scope`, e.g. left behind by a crashed run.
/// Returns how many were removed.
pub fn remove_scope(scope: &str) -> usize {
    list_segments(scope)
        .iter()
        .filter(|n| segment::unlink(n).is_ok())
        .count()
}

/// Reads a segment's header without registering as a reader.
pub fn peek_header(name: &SegmentName) -> Result<SegmentHeader, ShmError> {
    let seg = segment::Segment::open(name)?;
    Ok(seg.header().load())
}
