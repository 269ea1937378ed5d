use std::sync::atomic::{fence, Ordering};
use std::time::{Duration, Instant};

use crate::snapshot::{ParticleSnapshot, ParticleSource};

use super::header::{
    bytes_needed, grown_capacity, FLAG_SUPERSEDED, FLAG_TERMINATED, OFF_COUNT, OFF_FLAGS,
    OFF_GENERATION, OFF_STEP, OFF_SUCCESSOR, OFF_TIME,
};
use super::segment::{unlink, Segment};
use super::{SegmentName, ShmError, DEFAULT_REAP_TIMEOUT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublishOutcome {
    Published,
    /// The snapshot did not fit; it was published to this new segment and the
    /// writer now targets it.
    Grew { successor: SegmentName },
}

struct Retired {
    segment: Segment,
    since: Instant,
}

/// The single writer of a rank's snapshot channel.
///
/// Publishing never waits on a reader. When a snapshot outgrows the segment
/// the writer moves to a larger successor and keeps the old one readable
/// until its readers have left (or a timeout passes), then unlinks it.
pub struct SegmentWriter {
    current: Segment,
    generation: u64,
    retired: Vec<Retired>,
    reap_timeout: Duration,
}

impl SegmentWriter {
    pub fn create(name: &SegmentName, capacity: u64) -> Result<SegmentWriter, ShmError> {
        Ok(SegmentWriter {
            current: Segment::create(name, capacity)?,
            generation: 0,
            retired: Vec::new(),
            reap_timeout: DEFAULT_REAP_TIMEOUT,
        })
    }

    /// Creates the first segment sized for `count` particles.
    pub fn create_for(name: &SegmentName, count: usize) -> Result<SegmentWriter, ShmError> {
        Self::create(name, grown_capacity(count.max(1)))
    }

    pub fn set_reap_timeout(&mut self, timeout: Duration) {
        self.reap_timeout = timeout;
    }

    pub fn name(&self) -> &SegmentName {
        self.current.name()
    }

    pub fn capacity(&self) -> u64 {
        self.current.mapped_len() as u64
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Superseded segments not yet unlinked.
    pub fn retired_names(&self) -> Vec<SegmentName> {
        self.retired.iter().map(|r| r.segment.name().clone()).collect()
    }

    pub fn publish(&mut self, snap: &ParticleSnapshot) -> Result<PublishOutcome, ShmError> {
        self.publish_from(snap.sim_step, snap.sim_time, snap)
    }

    pub fn publish_from<S: ParticleSource + ?Sized>(
        &mut self,
        sim_step: u64,
        sim_time: f64,
        source: &S,
    ) -> Result<PublishOutcome, ShmError> {
        self.reap();
        let count = source.len();
        if count <= self.current.record_capacity() {
            write_snapshot(&self.current, &mut self.generation, sim_step, sim_time, source);
            return Ok(PublishOutcome::Published);
        }

        let old_epoch = self.current.name().epoch;
        let next = self.current.name().with_epoch(old_epoch + 1);
        let capacity = grown_capacity(count);
        debug_assert!(capacity >= 2 * bytes_needed(count));
        let successor = Segment::create(&next, capacity)?;
        let mut generation = 0;
        write_snapshot(&successor, &mut generation, sim_step, sim_time, source);

        let old = std::mem::replace(&mut self.current, successor);
        self.generation = generation;
        let h = old.header();
        h.u32_at(OFF_SUCCESSOR).store(old_epoch + 1, Ordering::Relaxed);
        h.u32_at(OFF_FLAGS).fetch_or(FLAG_SUPERSEDED, Ordering::Release);
        log::debug!("segment {} superseded by {next} ({capacity} bytes)", old.name());
        self.retired.push(Retired {
            segment: old,
            since: Instant::now(),
        });
        Ok(PublishOutcome::Grew { successor: next })
    }

    /// Unlinks superseded segments whose readers have moved on, or that have
    /// been superseded for longer than the reap timeout.
    pub fn reap(&mut self) {
        if self.retired.is_empty() {
            return;
        }
        let newest_has_readers = self.current.header().readers() > 0;
        let timeout = self.reap_timeout;
        self.retired.retain(|r| {
            let readers = r.segment.header().readers();
            let done = (readers == 0 && newest_has_readers) || r.since.elapsed() >= timeout;
            if done {
                if let Err(e) = unlink(r.segment.name()) {
                    log::warn!("unlinking {}: {e}", r.segment.name());
                }
            }
            !done
        });
    }
}

fn write_snapshot<S: ParticleSource + ?Sized>(
    seg: &Segment,
    generation: &mut u64,
    sim_step: u64,
    sim_time: f64,
    source: &S,
) {
    let h = seg.header();
    let gen = h.u64_at(OFF_GENERATION);
    gen.store(*generation + 1, Ordering::Relaxed);
    fence(Ordering::Release);
    h.u64_at(OFF_COUNT).store(source.len() as u64, Ordering::Relaxed);
    h.u64_at(OFF_STEP).store(sim_step, Ordering::Relaxed);
    h.u64_at(OFF_TIME).store(sim_time.to_bits(), Ordering::Relaxed);
    for i in 0..source.len() {
        let r = source.record(i);
        let words = r.position.iter().chain(r.velocity.iter());
        for (k, v) in words.enumerate() {
            h.payload_word(6 * i + k).store(v.to_bits(), Ordering::Relaxed);
        }
    }
    *generation += 2;
    gen.store(*generation, Ordering::Release);
}

impl Drop for SegmentWriter {
    fn drop(&mut self) {
        self.current
            .header()
            .u32_at(OFF_FLAGS)
            .fetch_or(FLAG_TERMINATED, Ordering::Release);
        for r in self.retired.drain(..) {
            let _ = unlink(r.segment.name());
        }
        let _ = unlink(self.current.name());
    }
}
