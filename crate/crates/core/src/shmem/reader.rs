use std::sync::atomic::{fence, Ordering};

use crate::snapshot::{ParticleRecord, ParticleSnapshot, ParticleSource};

use super::header::{
    SegmentHeader, HeaderRef, FLAG_SUPERSEDED, FLAG_TERMINATED, OFF_COUNT, OFF_GENERATION,
    OFF_READERS, OFF_STEP, OFF_SUCCESSOR, OFF_TIME,
};
use super::segment::Segment;
use super::{SegmentName, ShmError, DEFAULT_READ_RETRIES};

/// Outcome of one read attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum Acquire<T> {
    Fresh(T),
    /// Nothing new, or every retry raced a write; keep the previous snapshot.
    Unchanged,
    Superseded(SegmentName),
    Terminated,
}

pub type AcquireResult = Acquire<ParticleSnapshot>;

/// Zero-copy view of a segment payload inside one generation window.
///
/// Reads go straight to shared memory; the caller learns whether they were
/// consistent only when the enclosing [`SegmentReader::acquire_with`]
/// returns `Fresh`.
pub struct PayloadView<'a> {
    header: HeaderRef,
    count: usize,
    pub sim_step: u64,
    pub sim_time: f64,
    _segment: std::marker::PhantomData<&'a Segment>,
}

impl ParticleSource for PayloadView<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn record(&self, i: usize) -> ParticleRecord {
        assert!(i < self.count);
        let w = |k: usize| f32::from_bits(self.header.payload_word(6 * i + k).load(Ordering::Relaxed));
        ParticleRecord {
            position: [w(0), w(1), w(2)],
            velocity: [w(3), w(4), w(5)],
        }
    }
}

impl PayloadView<'_> {
    pub fn to_snapshot(&self) -> ParticleSnapshot {
        ParticleSnapshot {
            sim_step: self.sim_step,
            sim_time: self.sim_time,
            records: (0..self.count).map(|i| self.record(i)).collect(),
        }
    }
}

/// The reading end of a snapshot channel.
pub struct SegmentReader {
    segment: Option<Segment>,
    name: SegmentName,
    last_seen: u64,
    retries: u32,
}

impl SegmentReader {
    pub fn attach(name: &SegmentName) -> Result<SegmentReader, ShmError> {
        let segment = Segment::open(name)?;
        let header = segment.header().load();
        if !header.is_compatible() {
            return Err(ShmError::Incompatible(format!(
                "{name}: magic {:?} version {}",
                String::from_utf8_lossy(&header.magic),
                header.layout_version
            )));
        }
        if header.capacity_bytes > segment.mapped_len() as u64 {
            return Err(ShmError::Incompatible(format!(
                "{name}: header capacity {} exceeds object size {}",
                header.capacity_bytes,
                segment.mapped_len()
            )));
        }
        segment
            .header()
            .u32_at(OFF_READERS)
            .fetch_add(1, Ordering::AcqRel);
        Ok(SegmentReader {
            segment: Some(segment),
            name: name.clone(),
            last_seen: 0,
            retries: DEFAULT_READ_RETRIES,
        })
    }

    /// Attaches to the newest epoch of `rank` within `scope`.
    pub fn attach_latest(scope: &str, rank: u32) -> Result<SegmentReader, ShmError> {
        let latest = super::list_segments(scope)
            .into_iter()
            .filter(|n| n.rank == rank)
            .max_by_key(|n| n.epoch)
            .ok_or_else(|| ShmError::NotFound(SegmentName::new(scope, rank, 0)))?;
        Self::attach(&latest)
    }

    pub fn set_retries(&mut self, retries: u32) {
        self.retries = retries.max(1);
    }

    pub fn name(&self) -> &SegmentName {
        &self.name
    }

    pub fn last_seen_generation(&self) -> u64 {
        self.last_seen
    }

    pub fn is_attached(&self) -> bool {
        self.segment.is_some()
    }

    /// The header as currently visible, without consistency checks.
    pub fn header(&self) -> Option<SegmentHeader> {
        self.segment.as_ref().map(|s| s.header().load())
    }

    /// Copies the newest snapshot out of shared memory.
    pub fn acquire(&mut self) -> AcquireResult {
        self.acquire_with(|view| view.to_snapshot())
    }

    /// Runs `consume` directly on the shared payload and keeps its result if
    /// the generation was stable around the whole call.
    pub fn acquire_with<T>(&mut self, mut consume: impl FnMut(&PayloadView<'_>) -> T) -> Acquire<T> {
        let Some(segment) = &self.segment else {
            return Acquire::Terminated;
        };
        let h = segment.header();
        let flags = h.flags();
        if flags & FLAG_SUPERSEDED != 0 {
            let epoch = h.u32_at(OFF_SUCCESSOR).load(Ordering::Relaxed);
            return Acquire::Superseded(self.name.with_epoch(epoch));
        }
        let gen = h.u64_at(OFF_GENERATION);
        let capacity = segment.record_capacity() as u64;
        for _ in 0..self.retries {
            let g1 = gen.load(Ordering::Acquire);
            if g1 % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            if g1 == self.last_seen {
                break;
            }
            let count = h.u64_at(OFF_COUNT).load(Ordering::Relaxed);
            let sim_step = h.u64_at(OFF_STEP).load(Ordering::Relaxed);
            let sim_time = f64::from_bits(h.u64_at(OFF_TIME).load(Ordering::Relaxed));
            if count > capacity {
                continue;
            }
            let view = PayloadView {
                header: h,
                count: count as usize,
                sim_step,
                sim_time,
                _segment: std::marker::PhantomData,
            };
            let out = consume(&view);
            fence(Ordering::Acquire);
            if gen.load(Ordering::Relaxed) == g1 {
                self.last_seen = g1;
                return Acquire::Fresh(out);
            }
        }
        if h.flags() & FLAG_TERMINATED != 0 && gen.load(Ordering::Acquire) == self.last_seen {
            return Acquire::Terminated;
        }
        Acquire::Unchanged
    }

    /// Releases the mapping and the reader-count slot. Idempotent.
    pub fn detach(&mut self) {
        if let Some(seg) = self.segment.take() {
            seg.header().u32_at(OFF_READERS).fetch_sub(1, Ordering::AcqRel);
        }
    }
}

impl Drop for SegmentReader {
    fn drop(&mut self) {
        self.detach();
    }
}

/// A reader that follows the epoch chain across reallocations.
pub struct FollowingReader {
    reader: SegmentReader,
    epochs_followed: Vec<u32>,
}

impl FollowingReader {
    pub fn new(reader: SegmentReader) -> Self {
        let epochs_followed = vec![reader.name().epoch];
        Self {
            reader,
            epochs_followed,
        }
    }

    pub fn reader(&self) -> &SegmentReader {
        &self.reader
    }

    /// Every epoch this reader has been attached to, in order.
    pub fn epochs(&self) -> &[u32] {
        &self.epochs_followed
    }

    pub fn acquire(&mut self) -> AcquireResult {
        self.acquire_with(|v| v.to_snapshot())
    }

    /// Like [`SegmentReader::acquire_with`], transparently moving to the
    /// successor when the current segment was superseded. The successor is
    /// attached before the old segment is released.
    pub fn acquire_with<T>(&mut self, mut consume: impl FnMut(&PayloadView<'_>) -> T) -> Acquire<T> {
        loop {
            match self.reader.acquire_with(&mut consume) {
                Acquire::Superseded(next) => {
                    let attached = match SegmentReader::attach(&next) {
                        Ok(r) => Ok(r),
                        // the successor may already be gone if the chain moved
                        // on again; jump to the newest epoch
                        Err(ShmError::NotFound(_)) => {
                            SegmentReader::attach_latest(&next.scope, next.rank)
                        }
                        Err(e) => Err(e),
                    };
                    match attached {
                        Ok(mut r) => {
                            r.set_retries(self.reader.retries);
                            self.epochs_followed.push(r.name().epoch);
                            let mut old = std::mem::replace(&mut self.reader, r);
                            old.detach();
                        }
                        Err(_) => return Acquire::Terminated,
                    }
                }
                other => return other,
            }
        }
    }

    pub fn detach(&mut self) {
        self.reader.detach();
    }
}
