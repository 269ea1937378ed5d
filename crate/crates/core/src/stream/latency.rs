use std::time::{Duration, Instant};

/// How long a round-trip measurement stays current.
pub const DEFAULT_ECHO_STALE: Duration = Duration::from_secs(2);

/// Round trip from frame capture at the head to the client's echo of the
/// frame's timestamp, on one monotonic clock.
#[derive(Debug, Clone)]
pub struct LatencyTracker {
    epoch: Instant,
    stale_after: Duration,
    last: Option<(Instant, f64)>,
}

impl LatencyTracker {
    pub fn new(epoch: Instant, stale_after: Duration) -> Self {
        Self {
            epoch,
            stale_after,
            last: None,
        }
    }

    /// Microseconds since the epoch; the timestamp stamped on frames.
    pub fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    /// Records an echo of `capture_us` and returns the round trip in ms.
    /// Timestamps from the future count as zero.
    pub fn record_echo(&mut self, capture_us: u64) -> f64 {
        let now = self.now_us();
        let ms = now.saturating_sub(capture_us) as f64 / 1000.0;
        self.last = Some((Instant::now(), ms));
        ms
    }

    /// Latest round trip, or `None` if no echo arrived within the stale
    /// window.
    pub fn roundtrip_ms(&self) -> Option<f64> {
        self.last
            .filter(|(at, _)| at.elapsed() <= self.stale_after)
            .map(|(_, ms)| ms)
    }
}
