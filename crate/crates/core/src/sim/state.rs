use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::snapshot::{ParticleRecord, ParticleSnapshot};
use crate::steer::{CommandKind, SteeringCommand};

use super::{compute_forces, Halo, HaloKind, LjTable, RankDomain, SimConfig, SimError};

/// Lattice perturbation as a fraction of the lattice spacing.
const LATTICE_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub id: u32,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub force: [f64; 3],
}

/// A steering command as actually applied: its sequence number and the step
/// boundary it took effect at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedCommand {
    pub seq: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    Paused,
    Terminated,
}

/// One rank's simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    config: SimConfig,
    domain: RankDomain,
    table_cutoff: f64,
    sim_step: u64,
    sim_time: f64,
    dt: f64,
    target_temperature: Option<f64>,
    paused: bool,
    terminated: bool,
    particles: Vec<Particle>,
    ghosts: Vec<Particle>,
    forces_valid: bool,
    potential_share: f64,
    applied: Vec<AppliedCommand>,
}

fn wrap(v: f64, l: f64) -> f64 {
    let r = v.rem_euclid(l);
    if r >= l {
        0.0
    } else {
        r
    }
}

impl SimState {
    /// Places this rank's share of a jittered cubic lattice and draws
    /// Maxwell-Boltzmann velocities.
    ///
    /// The whole lattice and all velocities are generated from `seed` alone
    /// and the rank keeps the sites inside its slab, so every decomposition
    /// of the same config starts from the same global state.
    pub fn init(config: &SimConfig, rank: usize) -> Result<Self, SimError> {
        config.validate()?;
        if rank >= config.rank_count {
            return Err(SimError::Config(format!(
                "rank {rank} out of range for {} ranks",
                config.rank_count
            )));
        }
        let n = config.particle_count;
        let l = config.box_length;
        let mut side = 1usize;
        while side * side * side < n {
            side += 1;
        }
        let spacing = l / side as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sites = Vec::with_capacity(n);
        for g in 0..n {
            let idx = [g % side, (g / side) % side, g / (side * side)];
            let mut pos = [0.0; 3];
            for k in 0..3 {
                let jitter = rng.gen_range(-1.0..1.0) * LATTICE_JITTER * spacing;
                pos[k] = wrap((idx[k] as f64 + 0.5) * spacing + jitter, l);
            }
            let vel: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            sites.push((pos, vel));
        }

        if n > 0 {
            let mut mean = [0.0; 3];
            for (_, v) in &sites {
                for k in 0..3 {
                    mean[k] += v[k];
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let mut sum_sq = 0.0;
            for (_, v) in &mut sites {
                for k in 0..3 {
                    v[k] -= mean[k];
                    sum_sq += v[k] * v[k];
                }
            }
            let scale = if sum_sq > 0.0 {
                (3.0 * n as f64 * config.initial_temperature / sum_sq).sqrt()
            } else {
                0.0
            };
            for (_, v) in &mut sites {
                for c in v.iter_mut() {
                    *c *= scale;
                }
            }
        }

        Self::assemble(config, rank, sites)
    }

    /// Builds a state from explicit `(position, velocity)` pairs; ids follow
    /// input order and the rank keeps the particles inside its slab.
    pub fn from_particles(
        config: &SimConfig,
        rank: usize,
        particles: Vec<([f64; 3], [f64; 3])>,
    ) -> Result<Self, SimError> {
        let mut config = config.clone();
        config.particle_count = particles.len();
        config.validate()?;
        if rank >= config.rank_count {
            return Err(SimError::Config(format!(
                "rank {rank} out of range for {} ranks",
                config.rank_count
            )));
        }
        let l = config.box_length;
        let sites = particles
            .into_iter()
            .map(|(p, v)| ([wrap(p[0], l), wrap(p[1], l), wrap(p[2], l)], v))
            .collect();
        Self::assemble(&config, rank, sites)
    }

    fn assemble(
        config: &SimConfig,
        rank: usize,
        sites: Vec<([f64; 3], [f64; 3])>,
    ) -> Result<Self, SimError> {
        let domain = config.domain(rank);
        let particles = sites
            .into_iter()
            .enumerate()
            .filter(|(_, (p, _))| domain.contains(p[0]))
            .map(|(id, (pos, vel))| Particle {
                id: id as u32,
                pos,
                vel,
                force: [0.0; 3],
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            domain,
            table_cutoff: config.cutoff,
            sim_step: 0,
            sim_time: 0.0,
            dt: config.dt,
            target_temperature: config.target_temperature,
            paused: false,
            terminated: false,
            particles,
            ghosts: Vec::new(),
            forces_valid: false,
            potential_share: 0.0,
            applied: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn domain(&self) -> &RankDomain {
        &self.domain
    }

    pub fn rank(&self) -> usize {
        self.domain.rank_id
    }

    pub fn sim_step(&self) -> u64 {
        self.sim_step
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn target_temperature(&self) -> Option<f64> {
        self.target_temperature
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn applied_log(&self) -> &[AppliedCommand] {
        &self.applied
    }

    /// Σ v over this rank's particles (unit masses).
    pub fn local_momentum(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.particles {
            for k in 0..3 {
                m[k] += p.vel[k];
            }
        }
        m
    }

    fn table(&self) -> LjTable {
        LjTable::new(self.table_cutoff)
    }

    /// Refreshes ghosts and forces if positions changed since the last
    /// evaluation. Collective: every rank must call it together.
    pub fn ensure_forces(&mut self, halo: &mut dyn Halo) -> Result<(), SimError> {
        if !self.forces_valid {
            self.refresh_ghosts_and_forces(halo)?;
        }
        Ok(())
    }

    fn refresh_ghosts_and_forces(&mut self, halo: &mut dyn Halo) -> Result<(), SimError> {
        let l = self.config.box_length;
        let c = self.config.cutoff;
        let k = self.config.rank_count;
        let rank = self.rank();
        let (min, max) = (self.domain.slab_min_x, self.domain.slab_max_x);
        let left_shift = if rank == 0 { l } else { 0.0 };
        let right_shift = if rank + 1 == k { -l } else { 0.0 };
        let mut to_left = Vec::new();
        let mut to_right = Vec::new();
        for p in &self.particles {
            if p.pos[0] < min + c {
                let mut g = *p;
                g.pos[0] += left_shift;
                to_left.push(g);
            }
            if p.pos[0] >= max - c {
                let mut g = *p;
                g.pos[0] += right_shift;
                to_right.push(g);
            }
        }
        let (from_left, from_right) =
            halo.exchange(HaloKind::Ghosts, self.sim_step, &to_left, &to_right)?;
        self.ghosts = from_left;
        self.ghosts.extend(from_right);
        let table = self.table();
        self.potential_share =
            compute_forces(&mut self.particles, &self.ghosts, (min, max), l, &table);
        self.forces_valid = true;
        Ok(())
    }

    /// Moves particles that left the slab to the neighbouring rank.
    fn migrate(&mut self, halo: &mut dyn Halo, next_step: u64) -> Result<(), SimError> {
        let l = self.config.box_length;
        let g = self.domain.ghost_width;
        let w = self.domain.width();
        let min = self.domain.slab_min_x;
        for p in &self.particles {
            if !p.pos.iter().chain(p.vel.iter()).all(|v| v.is_finite()) {
                return Err(SimError::Instability {
                    id: p.id,
                    step: next_step,
                });
            }
        }
        if self.config.rank_count == 1 {
            return Ok(());
        }
        let mut keep = Vec::with_capacity(self.particles.len());
        let mut to_left = Vec::new();
        let mut to_right = Vec::new();
        for p in self.particles.drain(..) {
            let offset = (p.pos[0] - min).rem_euclid(l);
            if offset < w {
                keep.push(p);
                continue;
            }
            let beyond_right = offset - w;
            let beyond_left = l - offset;
            if beyond_right <= beyond_left && beyond_right < g {
                to_right.push(p);
            } else if beyond_left < g {
                to_left.push(p);
            } else {
                return Err(SimError::Instability {
                    id: p.id,
                    step: next_step,
                });
            }
        }
        let (from_left, from_right) =
            halo.exchange(HaloKind::Migrants, next_step, &to_left, &to_right)?;
        keep.extend(from_left);
        keep.extend(from_right);
        keep.sort_unstable_by_key(|p| p.id);
        self.particles = keep;
        Ok(())
    }

    /// One velocity-Verlet step. A paused or terminated state does not move.
    pub fn step(&mut self, halo: &mut dyn Halo) -> Result<StepOutcome, SimError> {
        if self.terminated {
            return Ok(StepOutcome::Terminated);
        }
        if self.paused {
            return Ok(StepOutcome::Paused);
        }
        self.ensure_forces(halo)?;
        let next = self.sim_step + 1;
        let dt = self.dt;
        let half = 0.5 * dt;
        let l = self.config.box_length;
        for p in &mut self.particles {
            for k in 0..3 {
                p.vel[k] += half * p.force[k];
                p.pos[k] = wrap(p.pos[k] + dt * p.vel[k], l);
            }
        }
        self.forces_valid = false;
        self.migrate(halo, next)?;
        self.refresh_ghosts_and_forces(halo)?;
        for p in &mut self.particles {
            for k in 0..3 {
                p.vel[k] += half * p.force[k];
            }
        }
        if let Some(target) = self.target_temperature {
            self.rescale_to(target, halo)?;
        }
        self.sim_step = next;
        self.sim_time += dt;
        Ok(StepOutcome::Advanced)
    }

    fn rescale_to(&mut self, target: f64, halo: &mut dyn Halo) -> Result<(), SimError> {
        let sum_sq: f64 = self
            .particles
            .iter()
            .map(|p| p.vel.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let totals = halo.allreduce_sum(&[sum_sq, self.particles.len() as f64])?;
        if totals[0] > 0.0 && totals[1] > 0.0 {
            let temperature = totals[0] / (3.0 * totals[1]);
            let lambda = (target / temperature).sqrt();
            for p in &mut self.particles {
                for v in &mut p.vel {
                    *v *= lambda;
                }
            }
        }
        Ok(())
    }

    /// Applies a steering command at the given step boundary. Unknown
    /// parameters are rejected and leave the state untouched.
    pub fn apply_steering(&mut self, cmd: &SteeringCommand, at_step: u64) -> Result<(), SimError> {
        match &cmd.kind {
            CommandKind::SetParam { name, value } => {
                let bad = || SimError::InvalidValue {
                    name: name.clone(),
                    value: *value,
                };
                match name.as_str() {
                    "dt" => {
                        if !(*value > 0.0 && value.is_finite()) {
                            return Err(bad());
                        }
                        self.dt = *value;
                    }
                    "target_temperature" => {
                        if !(*value >= 0.0 && value.is_finite()) {
                            return Err(bad());
                        }
                        // zero switches the thermostat off
                        self.target_temperature = (*value > 0.0).then_some(*value);
                    }
                    other => {
                        log::warn!("rejecting steering of unknown parameter {other:?}");
                        return Err(SimError::UnknownParameter(other.to_string()));
                    }
                }
            }
            CommandKind::Pause => self.paused = true,
            CommandKind::Resume => self.paused = false,
            CommandKind::Terminate => self.terminated = true,
        }
        self.applied.push(AppliedCommand {
            seq: cmd.seq,
            step: at_step,
        });
        Ok(())
    }

    /// This rank's `(kinetic, potential)` contribution. Requires current forces.
    pub fn local_energy(&self) -> (f64, f64) {
        let kinetic = self
            .particles
            .iter()
            .map(|p| 0.5 * p.vel.iter().map(|v| v * v).sum::<f64>())
            .sum();
        (kinetic, self.potential_share)
    }

    /// Whole-system `(kinetic, potential)`. Collective.
    pub fn total_energy(&mut self, halo: &mut dyn Halo) -> Result<(f64, f64), SimError> {
        self.ensure_forces(halo)?;
        let (k, u) = self.local_energy();
        let t = halo.allreduce_sum(&[k, u])?;
        Ok((t[0], t[1]))
    }

    pub fn snapshot(&self) -> ParticleSnapshot {
        let l = self.config.box_length as f32;
        let clamp = |v: f64| {
            let f = v as f32;
            // f64 values just below the box edge can round up to it
            if f >= l {
                f32::from_bits(l.to_bits() - 1)
            } else {
                f
            }
        };
        ParticleSnapshot {
            sim_step: self.sim_step,
            sim_time: self.sim_time,
            records: self
                .particles
                .iter()
                .map(|p| ParticleRecord {
                    position: [clamp(p.pos[0]), clamp(p.pos[1]), clamp(p.pos[2])],
                    velocity: [p.vel[0] as f32, p.vel[1] as f32, p.vel[2] as f32],
                })
                .collect(),
        }
    }
}
