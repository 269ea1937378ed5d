//! The fixed 64-byte little-endian segment header.
//!
//! ```text
//! off  size  field
//!   0     8  magic "INSITU01"
//!   8     4  layout_version (1)
//!  12     4  reader_count
//!  16     8  generation (odd while a write is in progress)
//!  24     8  capacity_bytes
//!  32     8  particle_count
//!  40     8  sim_step
//!  48     8  sim_time (f64 bits)
//!  56     4  flags (bit 0 superseded, bit 1 producer terminated)
//!  60     4  successor_epoch
//! ```

use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

pub const MAGIC: [u8; 8] = *b"INSITU01";
pub const LAYOUT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
pub const RECORD_LEN: usize = 24;

pub const OFF_MAGIC: usize = 0;
pub const OFF_VERSION: usize = 8;
pub const OFF_READERS: usize = 12;
pub const OFF_GENERATION: usize = 16;
pub const OFF_CAPACITY: usize = 24;
pub const OFF_COUNT: usize = 32;
pub const OFF_STEP: usize = 40;
pub const OFF_TIME: usize = 48;
pub const OFF_FLAGS: usize = 56;
pub const OFF_SUCCESSOR: usize = 60;

pub const FLAG_SUPERSEDED: u32 = 1;
pub const FLAG_TERMINATED: u32 = 2;

/// Bytes needed to hold `count` particles including the header.
pub fn bytes_needed(count: usize) -> u64 {
    (HEADER_LEN + RECORD_LEN * count) as u64
}

/// Capacity a segment grows to when `count` particles do not fit.
pub fn grown_capacity(count: usize) -> u64 {
    (2 * bytes_needed(count)).next_power_of_two()
}

/// Atomic accessors over a mapped header.
///
/// Valid for as long as the mapping behind `base` is.
#[derive(Clone, Copy)]
pub(crate) struct HeaderRef {
    base: *mut u8,
}

// SAFETY: all accesses go through atomics on memory owned by the mapping.
unsafe impl Send for HeaderRef {}

impl HeaderRef {
    /// # Safety
    /// `base` must point to a live, page-aligned mapping of at least
    /// `HEADER_LEN` bytes that outlives every use of the returned value.
    pub unsafe fn new(base: *mut u8) -> Self {
        Self { base }
    }

    pub fn u64_at(&self, off: usize) -> &AtomicU64 {
        debug_assert!(off % 8 == 0 && off + 8 <= HEADER_LEN);
        // SAFETY: aligned, in bounds, mapping outlives self per `new`.
        unsafe { AtomicU64::from_ptr(self.base.add(off) as *mut u64) }
    }

    pub fn u32_at(&self, off: usize) -> &AtomicU32 {
        debug_assert!(off % 4 == 0 && off + 4 <= HEADER_LEN);
        // SAFETY: as above.
        unsafe { AtomicU32::from_ptr(self.base.add(off) as *mut u32) }
    }

    pub fn payload_word(&self, index: usize) -> &AtomicU32 {
        // SAFETY: callers bound `index` by the segment capacity.
        unsafe { AtomicU32::from_ptr(self.base.add(HEADER_LEN + 4 * index) as *mut u32) }
    }

    pub fn init(&self, capacity: u64) {
        self.u64_at(OFF_MAGIC)
            .store(u64::from_le_bytes(MAGIC), Ordering::Relaxed);
        self.u32_at(OFF_VERSION).store(LAYOUT_VERSION, Ordering::Relaxed);
        self.u32_at(OFF_READERS).store(0, Ordering::Relaxed);
        self.u64_at(OFF_CAPACITY).store(capacity, Ordering::Relaxed);
        for off in [OFF_COUNT, OFF_STEP, OFF_TIME] {
            self.u64_at(off).store(0, Ordering::Relaxed);
        }
        self.u32_at(OFF_FLAGS).store(0, Ordering::Relaxed);
        self.u32_at(OFF_SUCCESSOR).store(0, Ordering::Relaxed);
        self.u64_at(OFF_GENERATION).store(0, Ordering::Release);
    }

    pub fn magic(&self) -> [u8; 8] {
        self.u64_at(OFF_MAGIC).load(Ordering::Relaxed).to_le_bytes()
    }

    pub fn flags(&self) -> u32 {
        self.u32_at(OFF_FLAGS).load(Ordering::Acquire)
    }

    pub fn readers(&self) -> u32 {
        self.u32_at(OFF_READERS).load(Ordering::Acquire)
    }

    /// Reads every field without any consistency guarantee.
    pub fn load(&self) -> SegmentHeader {
        SegmentHeader {
            magic: self.magic(),
            layout_version: self.u32_at(OFF_VERSION).load(Ordering::Relaxed),
            reader_count: self.readers(),
            generation: self.u64_at(OFF_GENERATION).load(Ordering::Acquire),
            capacity_bytes: self.u64_at(OFF_CAPACITY).load(Ordering::Relaxed),
            particle_count: self.u64_at(OFF_COUNT).load(Ordering::Relaxed),
            sim_step: self.u64_at(OFF_STEP).load(Ordering::Relaxed),
            sim_time: f64::from_bits(self.u64_at(OFF_TIME).load(Ordering::Relaxed)),
            flags: self.flags(),
            successor_epoch: self.u32_at(OFF_SUCCESSOR).load(Ordering::Relaxed),
        }
    }
}

/// A decoded segment header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentHeader {
    pub magic: [u8; 8],
    pub layout_version: u32,
    pub reader_count: u32,
    pub generation: u64,
    pub capacity_bytes: u64,
    pub particle_count: u64,
    pub sim_step: u64,
    pub sim_time: f64,
    pub flags: u32,
    pub successor_epoch: u32,
}

impl SegmentHeader {
    /// Decodes the first 64 bytes of a segment.
    pub fn parse(bytes: &[u8]) -> Option<SegmentHeader> {
        if bytes.len() < HEADER_LEN {
            return None;
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        Some(SegmentHeader {
            magic: bytes[..8].try_into().unwrap(),
            layout_version: u32_at(OFF_VERSION),
            reader_count: u32_at(OFF_READERS),
            generation: u64_at(OFF_GENERATION),
            capacity_bytes: u64_at(OFF_CAPACITY),
            particle_count: u64_at(OFF_COUNT),
            sim_step: u64_at(OFF_STEP),
            sim_time: f64::from_bits(u64_at(OFF_TIME)),
            flags: u32_at(OFF_FLAGS),
            successor_epoch: u32_at(OFF_SUCCESSOR),
        })
    }

    pub fn is_superseded(&self) -> bool {
        self.flags & FLAG_SUPERSEDED != 0
    }

    pub fn is_terminated(&self) -> bool {
        self.flags & FLAG_TERMINATED != 0
    }

    pub fn is_compatible(&self) -> bool {
        self.magic == MAGIC && self.layout_version == LAYOUT_VERSION
    }
}

impl fmt::Display for SegmentHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let magic: String = self
            .magic
            .iter()
            .map(|&b| if b.is_ascii_graphic() { b as char } else { '.' })
            .collect();
        writeln!(f, "magic            {magic}")?;
        writeln!(f, "layout_version   {}", self.layout_version)?;
        writeln!(f, "reader_count     {}", self.reader_count)?;
        writeln!(
            f,
            "generation       {}{}",
            self.generation,
            if self.generation % 2 == 1 { " (write in progress)" } else { "" }
        )?;
        writeln!(f, "capacity_bytes   {}", self.capacity_bytes)?;
        writeln!(f, "particle_count   {}", self.particle_count)?;
        writeln!(f, "sim_step         {}", self.sim_step)?;
        writeln!(f, "sim_time         {}", self.sim_time)?;
        let mut names = Vec::new();
        if self.is_superseded() {
            names.push("superseded");
        }
        if self.is_terminated() {
            names.push("terminated");
        }
        writeln!(f, "flags            {:#x} [{}]", self.flags, names.join(","))?;
        write!(f, "successor_epoch  {}", self.successor_epoch)
    }
}
