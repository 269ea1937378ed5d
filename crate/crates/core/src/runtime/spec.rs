use std::path::Path;
use std::time::Duration;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::{CameraPose, ColorMap, RenderMode, DEFAULT_RADIUS};
use crate::sim::SimConfig;
use crate::steer::{SteeringScript, DEFAULT_DELAY_STEPS};
use crate::stream::Encoding;

use super::RuntimeError;

/// Everything a rank needs to know about a run. The launcher hands the same
/// spec to every rank; ranks compare checksums when they connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub sim: SimConfig,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    #[serde(default)]
    pub mode: RenderMode,
    /// Stream endpoint of the head; `None` runs headless.
    #[serde(default)]
    pub listen: Option<String>,
    #[serde(default = "default_delay_steps")]
    pub delay_steps: u64,
    /// Stop after this many steps; `None` runs until a Terminate command.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_color_range")]
    pub color_range: [f64; 2],
    /// Per-sphere opacity in VDI mode.
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    #[serde(default = "default_fov")]
    pub vertical_fov: f64,
    /// Shared-memory namespace, so concurrent runs do not collide.
    #[serde(default = "default_scope")]
    pub scope: String,
    /// Render loop rate cap; `None` renders as fast as possible.
    #[serde(default)]
    pub max_fps: Option<f64>,
    /// Steering script text, replayed by the head against observed steps.
    #[serde(default)]
    pub steering_script: Option<String>,
    #[serde(default = "default_ack_timeout_ms")]
    pub ack_timeout_ms: u64,
    #[serde(default)]
    pub bench: Option<BenchSpec>,
}

/// Scripted benchmark: camera motion, periodic steering, a fixed number of
/// measured frames, then a Terminate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    #[serde(default = "default_bench_frames")]
    pub frames: u64,
    #[serde(default = "default_warmup")]
    pub warmup_frames: u64,
    #[serde(default = "default_orbit")]
    pub orbit_deg_per_frame: f64,
    /// Submit a thermostat change every this many frames; 0 disables.
    #[serde(default = "default_steer_every")]
    pub steer_every_frames: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            frames: default_bench_frames(),
            warmup_frames: default_warmup(),
            orbit_deg_per_frame: default_orbit(),
            steer_every_frames: default_steer_every(),
        }
    }
}

fn default_size() -> usize {
    256
}
fn default_encoding() -> Encoding {
    Encoding::Rle
}
fn default_delay_steps() -> u64 {
    DEFAULT_DELAY_STEPS
}
fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_color_range() -> [f64; 2] {
    [0.0, 3.0]
}
fn default_opacity() -> f64 {
    0.7
}
fn default_s_max() -> usize {
    8
}
fn default_fov() -> f64 {
    45.0
}
fn default_scope() -> String {
    crate::shmem::DEFAULT_SCOPE.to_string()
}
fn default_ack_timeout_ms() -> u64 {
    2000
}
fn default_bench_frames() -> u64 {
    300
}
fn default_warmup() -> u64 {
    10
}
fn default_orbit() -> f64 {
    0.5
}
fn default_steer_every() -> u64 {
    30
}

impl RunSpec {
    /// A headless spec with defaults around `sim`.
    pub fn new(sim: SimConfig) -> Self {
        Self {
            sim,
            width: default_size(),
            height: default_size(),
            encoding: default_encoding(),
            mode: RenderMode::default(),
            listen: None,
            delay_steps: default_delay_steps(),
            max_steps: None,
            radius: default_radius(),
            color_range: default_color_range(),
            opacity: default_opacity(),
            s_max: default_s_max(),
            vertical_fov: default_fov(),
            scope: default_scope(),
            max_fps: None,
            steering_script: None,
            ack_timeout_ms: default_ack_timeout_ms(),
            bench: None,
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let fail = |m: String| Err(RuntimeError::Config(m));
        self.sim.validate()?;
        let dim_ok = |d: usize| (1..=u16::MAX as usize).contains(&d);
        if !dim_ok(self.width) || !dim_ok(self.height) {
            return fail(format!("image size {}x{}", self.width, self.height));
        }
        if self.delay_steps < 2 {
            return fail("delay_steps must be at least 2 so the head can run ahead of its own watermark".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius));
        }
        let [vmin, vmax] = self.color_range;
        if !(vmin.is_finite() && vmax.is_finite() && vmin < vmax) {
            return fail(format!("colour range needs vmin < vmax, got {vmin}..{vmax}"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return fail(format!("opacity must be in (0, 1], got {}", self.opacity));
        }
        if !(1..=u16::MAX as usize).contains(&self.s_max) {
            return fail(format!("s_max must be in 1..=65535, got {}", self.s_max));
        }
        if self.mode == RenderMode::Opaque && self.encoding == Encoding::Vdi {
            return fail("the vdi encoding needs mode = \"vdi\"".into());
        }
        if self.scope.is_empty() || self.scope.contains('/') || self.scope.contains(".r") {
            return fail(format!("bad shared-memory scope {:?}", self.scope));
        }
        if let Some(f) = self.max_fps {
            if !(f > 0.0) {
                return fail(format!("max_fps must be positive, got {f}"));
            }
        }
        if let Some(b) = &self.bench {
            if b.frames == 0 {
                return fail("bench needs at least one frame".into());
            }
        }
        self.script()?;
        self.default_camera()?;
        Ok(())
    }

    pub fn script(&self) -> Result<Option<SteeringScript>, RuntimeError> {
        match &self.steering_script {
            None => Ok(None),
            Some(text) => Ok(Some(text.parse::<SteeringScript>()?.sorted())),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn checksum(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(bytes).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Reads a spec from JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<RunSpec, RuntimeError> {
        let text = std::fs::read_to_string(path)?;
        let spec: RunSpec = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn ack_timeout(&self) -> Duration {
        Duration::from_millis(self.ack_timeout_ms)
    }

    pub fn color_map(&self) -> ColorMap {
        ColorMap::blue_white_red(self.color_range[0], self.color_range[1])
    }

    pub fn box_center(&self) -> Point3<f64> {
        Point3::from(Vector3::repeat(0.5 * self.sim.box_length))
    }

    /// Looks at the box centre from +z, far enough back to frame the box.
    pub fn default_camera(&self) -> Result<CameraPose, RuntimeError> {
        let l = self.sim.box_length;
        let c = self.box_center();
        let eye = c + Vector3::new(0.0, 0.0, 1.8 * l);
        Ok(CameraPose::look_at(eye, c, Vector3::y(), self.vertical_fov, 0.1, 10.0 * l)?)
    }
}
