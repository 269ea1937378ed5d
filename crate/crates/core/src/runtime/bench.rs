use serde::{Deserialize, Serialize};

use crate::render::RenderMode;

/// Target render rate on the head.
pub const TARGET_FPS: f64 = 60.0;
/// Target time to reproject one VDI frame to a new viewpoint.
pub const TARGET_REPROJECT_MS: f64 = 20.0;

/// Machine-readable benchmark result, written by the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub ranks: usize,
    pub particles: usize,
    pub width: usize,
    pub height: usize,
    pub mode: RenderMode,
    /// Measured frames, warm-up excluded.
    pub frames: u64,
    pub fps: f64,
    /// Standard deviation of per-frame rates.
    pub fps_stdev: f64,
    pub sim_sps: f64,
    /// Mean time from submitting a steering command until every rank
    /// acknowledged it.
    pub steer_latency_ms: f64,
    pub steer_commands: u64,
    /// Mean time for the head's own render of a frame.
    pub render_ms: f64,
    /// Best of five reprojections of the composited VDI to a camera one
    /// degree away.
    pub reproject_ms: f64,
    /// Bytes the head sent in swap stages over the measured frames.
    pub bytes_exchanged: u64,
    pub bytes_exchanged_per_frame: f64,
    /// `8·w·h·(k−1)/k`, the exact per-rank swap traffic for opaque frames.
    pub opaque_traffic_per_frame: f64,
    pub warnings: Vec<String>,
}

impl BenchReport {
    /// Fills in warnings for missed targets.
    pub fn check_targets(&mut self) {
        self.warnings.clear();
        if self.fps < TARGET_FPS {
            self.warnings.push(format!("render loop at {:.1} fps, below {TARGET_FPS}", self.fps));
        }
        if self.reproject_ms >= TARGET_REPROJECT_MS {
            self.warnings.push(format!(
                "VDI reprojection took {:.2} ms, above {TARGET_REPROJECT_MS}",
                self.reproject_ms
            ));
        }
    }
}

/// Per-rank swap bytes for one opaque frame.
pub fn opaque_traffic(width: usize, height: usize, ranks: usize) -> f64 {
    let pixels = (width * height) as f64;
    crate::composite::DEPTH_PIXEL_SIZE as f64 * pixels * (ranks as f64 - 1.0) / ranks as f64
}

/// Mean and sample standard deviation.
pub fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
