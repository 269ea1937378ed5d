//! Slab-decomposed Lennard-Jones molecular dynamics in reduced units
//! (σ = ε = m = 1), integrated with velocity Verlet.

mod cells;
mod halo;
mod lj;
mod state;

pub use cells::compute_forces;
pub use halo::{Halo, HaloKind, LocalHalo, MeshHalo};
pub use lj::{lj_force_energy, LjTable};
pub use state::{AppliedCommand, Particle, SimState, StepOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NetError;

pub const DEFAULT_CUTOFF: f64 = 2.5;
pub const DEFAULT_INITIAL_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("particle {id} moved further than the ghost width at step {step}; dt too large")]
    Instability { id: u32, step: u64 },
    #[error("unknown steering parameter {0:?}")]
    UnknownParameter(String),
    #[error("invalid value {value} for parameter {name:?}")]
    InvalidValue { name: String, value: f64 },
    #[error("halo exchange failed: {0}")]
    Halo(#[from] NetError),
}

/// Simulation parameters. Keys double as the configuration file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub particle_count: usize,
    pub box_length: f64,
    pub dt: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Temperature the initial velocities are scaled to.
    #[serde(default = "default_initial_temperature")]
    pub initial_temperature: f64,
    /// Velocity-rescale thermostat setpoint; `None` runs NVE.
    #[serde(default)]
    pub target_temperature: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub rank_count: usize,
    #[serde(default = "one_u64")]
    pub steps_per_publish: u64,
}

fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}

fn default_initial_temperature() -> f64 {
    DEFAULT_INITIAL_TEMPERATURE
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

impl SimConfig {
    /// A config with defaults for everything but size, box and time step.
    pub fn new(particle_count: usize, box_length: f64, dt: f64) -> Self {
        Self {
            particle_count,
            box_length,
            dt,
            cutoff: DEFAULT_CUTOFF,
            initial_temperature: DEFAULT_INITIAL_TEMPERATURE,
            target_temperature: None,
            seed: 0,
            rank_count: 1,
            steps_per_publish: 1,
        }
    }

    /// Box length giving the requested number density.
    pub fn box_for_density(particle_count: usize, density: f64) -> f64 {
        (particle_count as f64 / density).cbrt()
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return fail(format!("cutoff must be positive, got {}", self.cutoff));
        }
        if !(self.box_length > 2.0 * self.cutoff) {
            return fail(format!(
                "box_length {} must exceed twice the cutoff {}",
                self.box_length, self.cutoff
            ));
        }
        if self.rank_count == 0 || !self.rank_count.is_power_of_two() {
            return fail(format!(
                "rank_count must be a power of two, got {}",
                self.rank_count
            ));
        }
        if self.box_length / (self.rank_count as f64) < self.cutoff {
            return fail(format!(
                "slab width {} is below the cutoff {}; use fewer ranks or a larger box",
                self.box_length / self.rank_count as f64,
                self.cutoff
            ));
        }
        if self.steps_per_publish == 0 {
            return fail("steps_per_publish must be at least 1".into());
        }
        if !(self.initial_temperature >= 0.0 && self.initial_temperature.is_finite()) {
            return fail(format!(
                "initial_temperature must be non-negative, got {}",
                self.initial_temperature
            ));
        }
        if let Some(t) = self.target_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return fail(format!("target_temperature must be positive, got {t}"));
            }
        }
        if self.particle_count > u32::MAX as usize {
            return fail("particle_count exceeds the id range".into());
        }
        Ok(())
    }

    pub fn domain(&self, rank: usize) -> RankDomain {
        let w = self.box_length / self.rank_count as f64;
        RankDomain {
            rank_id: rank,
            slab_min_x: w * rank as f64,
            slab_max_x: if rank + 1 == self.rank_count {
                self.box_length
            } else {
                w * (rank + 1) as f64
            },
            ghost_width: self.cutoff,
        }
    }
}

/// The x-slab `[slab_min_x, slab_max_x)` owned by one rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDomain {
    pub rank_id: usize,
    pub slab_min_x: f64,
    pub slab_max_x: f64,
    pub ghost_width: f64,
}

impl RankDomain {
    pub fn width(&self) -> f64 {
        self.slab_max_x - self.slab_min_x
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.slab_min_x && x < self.slab_max_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two_ranks() {
        let mut c = SimConfig::new(8, 10.0, 0.001);
        c.rank_count = 3;
        assert!(matches!(c.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn rejects_small_box() {
        let c = SimConfig::new(8, 4.9, 0.001);
        assert!(c.validate().is_err());
        let mut c = SimConfig::new(8, 10.0, 0.0);
        assert!(c.validate().is_err());
        c.dt = 0.001;
        c.cutoff = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn slabs_partition_the_box() {
        let mut c = SimConfig::new(8, 10.0, 0.001);
        c.rank_count = 4;
        let mut edge = 0.0;
        for r in 0..4 {
            let d = c.domain(r);
            assert_eq!(d.slab_min_x, edge);
            assert!(d.ghost_width <= d.width());
            edge = d.slab_max_x;
        }
        assert_eq!(edge, c.box_length);
    }

    #[test]
    fn parses_toml() {
        let c = SimConfig::from_toml(
            "particle_count = 100\nbox_length = 6.0\ndt = 0.001\nseed = 3\nrank_count = 2\n",
        );
        // slab 3.0 >= cutoff 2.5
        let c = c.unwrap();
        assert_eq!(c.rank_count, 2);
        assert_eq!(c.cutoff, 2.5);
        assert!(SimConfig::from_toml("particle_count = 1\nbox_length = 6.0\ndt = 0.1\nbogus = 1\n").is_err());
    }
}
