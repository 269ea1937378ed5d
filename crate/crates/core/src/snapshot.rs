//! The unit handed from a simulation rank to its renderer.

/// One particle as laid out in shared memory: position then velocity,
/// 3 × f32 each.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleRecord {
    pub position: [f32; 3],
    pub velocity: [f32; 3],
}

impl ParticleRecord {
    pub fn speed(&self) -> f32 {
        let v = self.velocity;
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }
}

/// A rank's particles at one simulation step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleSnapshot {
    pub sim_step: u64,
    pub sim_time: f64,
    pub records: Vec<ParticleRecord>,
}

impl ParticleSnapshot {
    pub fn count(&self) -> usize {
        self.records.len()
    }
}

/// Read access to particle records, whether owned or mapped in place.
pub trait ParticleSource {
    fn len(&self) -> usize;

    fn record(&self, i: usize) -> ParticleRecord;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ParticleSource for ParticleSnapshot {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn record(&self, i: usize) -> ParticleRecord {
        self.records[i]
    }
}

impl ParticleSource for [ParticleRecord] {
    fn len(&self) -> usize {
        <[ParticleRecord]>::len(self)
    }

    fn record(&self, i: usize) -> ParticleRecord {
        self[i]
    }
}
