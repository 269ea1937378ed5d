use std::ops::Range;
use std::time::Duration;

use crate::net::wire::{put_u16, put_u32, put_u64, put_u8, WireReader};
use crate::net::Mesh;

use super::fragment::Composite;
use super::CompositeError;

pub const SWAP_MAGIC: &[u8; 4] = b"BSWP";
/// Magic, stage, sender, frame sequence, payload length.
pub const SWAP_HEADER_LEN: usize = 4 + 1 + 2 + 8 + 4;
/// Stage number carried by gather messages.
pub const GATHER_STAGE: u8 = 0xFF;
pub const DEFAULT_STAGE_TIMEOUT: Duration = Duration::from_secs(2);

/// Partner and region schedule for binary swap over a power-of-two number
/// of ranks.
///
/// At stage `s` rank `r` pairs with `r ^ (1 << s)`. Of each pair the rank
/// with bit `s` clear holds the lower-numbered block of ranks, counts as in
/// front for ties and keeps the lower half of the current pixel range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeTopology {
    rank_count: usize,
    stages: u32,
}

impl CompositeTopology {
    pub fn new(rank_count: usize) -> Result<Self, CompositeError> {
        if rank_count == 0 || !rank_count.is_power_of_two() || rank_count > u16::MAX as usize {
            return Err(CompositeError::InvalidArgument(format!(
                "binary swap needs a power-of-two rank count, got {rank_count}"
            )));
        }
        Ok(Self {
            rank_count,
            stages: rank_count.trailing_zeros(),
        })
    }

    pub fn rank_count(&self) -> usize {
        self.rank_count
    }

    pub fn stages(&self) -> u32 {
        self.stages
    }

    pub fn partner(&self, rank: usize, stage: u32) -> usize {
        rank ^ (1 << stage)
    }

    /// True if `rank` is the front (lower) member of its pair at `stage`.
    pub fn is_front(&self, rank: usize, stage: u32) -> bool {
        rank & (1 << stage) == 0
    }

    /// Pixel ranges `rank` keeps and sends at `stage`, given its range
    /// before the stage.
    pub fn split(&self, rank: usize, stage: u32, region: Range<usize>) -> (Range<usize>, Range<usize>) {
        let mid = region.start + region.len() / 2;
        if self.is_front(rank, stage) {
            (region.start..mid, mid..region.end)
        } else {
            (mid..region.end, region.start..mid)
        }
    }

    /// Region `rank` owns after all stages.
    pub fn owned_range(&self, rank: usize, pixels: usize) -> Range<usize> {
        (0..self.stages).fold(0..pixels, |region, s| self.split(rank, s, region).0)
    }
}

/// Payload bytes this rank sent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SwapStats {
    pub swap_bytes: u64,
    pub gather_bytes: u64,
}

fn frame_message(stage: u8, sender: usize, frame_seq: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SWAP_HEADER_LEN + payload.len());
    out.extend_from_slice(SWAP_MAGIC);
    put_u8(&mut out, stage);
    put_u16(&mut out, sender as u16);
    put_u64(&mut out, frame_seq);
    put_u32(&mut out, payload.len() as u32);
    out.extend_from_slice(payload);
    out
}

fn receive(
    mesh: &mut Mesh,
    from: usize,
    stage: u8,
    frame_seq: u64,
    timeout: Duration,
) -> Result<Vec<u8>, CompositeError> {
    let link = mesh.link(from)?;
    link.set_timeout(Some(timeout))?;
    let mut head = [0u8; SWAP_HEADER_LEN];
    link.read_exact(&mut head)?;
    let mut r = WireReader::new(&head);
    r.expect_magic(SWAP_MAGIC)?;
    let (got_stage, sender, seq, len) = (r.u8()?, r.u16()? as usize, r.u64()?, r.u32()? as usize);
    if got_stage != stage || sender != from || seq != frame_seq {
        return Err(CompositeError::Protocol(format!(
            "expected stage {stage} from rank {from} for frame {frame_seq}, \
             got stage {got_stage} from rank {sender} for frame {seq}"
        )));
    }
    let mut payload = vec![0u8; len];
    link.read_exact(&mut payload)?;
    Ok(payload)
}

fn check_mesh(mesh: &Mesh, topo: &CompositeTopology) -> Result<(), CompositeError> {
    if mesh.size() != topo.rank_count() {
        return Err(CompositeError::InvalidArgument(format!(
            "mesh has {} ranks, topology {}",
            mesh.size(),
            topo.rank_count()
        )));
    }
    Ok(())
}

/// Runs the swap stages on `local`. Returns the range this rank now holds
/// fully composited; pixels outside it are left stale.
pub fn binary_swap<C: Composite>(
    local: &mut C,
    mesh: &mut Mesh,
    topo: &CompositeTopology,
    frame_seq: u64,
    timeout: Duration,
) -> Result<(Range<usize>, SwapStats), CompositeError> {
    check_mesh(mesh, topo)?;
    let rank = mesh.rank();
    let mut stats = SwapStats::default();
    let mut region = 0..local.pixel_count();
    for stage in 0..topo.stages() {
        let partner = topo.partner(rank, stage);
        let (keep, give) = topo.split(rank, stage, region);
        let payload = local.encode_range(give);
        stats.swap_bytes += payload.len() as u64;
        mesh.send(partner, frame_message(stage as u8, rank, frame_seq, &payload))?;
        let incoming = receive(mesh, partner, stage as u8, frame_seq, timeout)?;
        local.merge_range(keep.clone(), &incoming, topo.is_front(rank, stage))?;
        region = keep;
    }
    Ok((region, stats))
}

/// Sends every rank's owned range to rank 0, which assembles the frame in
/// its `local`. Returns the payload bytes this rank sent.
pub fn gather<C: Composite>(
    local: &mut C,
    mesh: &mut Mesh,
    topo: &CompositeTopology,
    frame_seq: u64,
    timeout: Duration,
) -> Result<u64, CompositeError> {
    check_mesh(mesh, topo)?;
    let rank = mesh.rank();
    let pixels = local.pixel_count();
    if rank != 0 {
        let payload = local.encode_range(topo.owned_range(rank, pixels));
        let sent = payload.len() as u64;
        mesh.send(0, frame_message(GATHER_STAGE, rank, frame_seq, &payload))?;
        return Ok(sent);
    }
    for peer in 1..topo.rank_count() {
        let payload = receive(mesh, peer, GATHER_STAGE, frame_seq, timeout)?;
        local.replace_range(topo.owned_range(peer, pixels), &payload)?;
    }
    Ok(0)
}

/// Binary swap followed by gather. Rank 0 gets the composited frame.
pub fn composite_frame<C: Composite>(
    mut local: C,
    mesh: &mut Mesh,
    topo: &CompositeTopology,
    frame_seq: u64,
    timeout: Duration,
) -> Result<(Option<C>, SwapStats), CompositeError> {
    let (_, mut stats) = binary_swap(&mut local, mesh, topo, frame_seq, timeout)?;
    stats.gather_bytes = gather(&mut local, mesh, topo, frame_seq, timeout)?;
    Ok(((mesh.rank() == 0).then_some(local), stats))
}
