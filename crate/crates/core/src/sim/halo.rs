//! Neighbour exchange between x-slabs: particle migration, ghost copies and
//! small global reductions.

use crate::net::wire::{put_f64, put_u32, put_u64, put_u8, WireReader};
use crate::net::{Mesh, NetError};

use super::{Particle, SimError};

const HALO_MAGIC: &[u8; 4] = b"HALO";
const REDUCE_MAGIC: &[u8; 4] = b"ARED";
const HALO_HEADER_LEN: usize = 4 + 1 + 1 + 8 + 4;
const RECORD_LEN: usize = 4 + 9 * 8;

const GOING_LEFT: u8 = 0;
const GOING_RIGHT: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaloKind {
    Migrants = 0,
    Ghosts = 1,
}

/// Collective communication a rank needs while stepping.
pub trait Halo {
    fn rank(&self) -> usize;

    fn rank_count(&self) -> usize;

    /// Sends `to_left`/`to_right` to the slab neighbours and returns what
    /// arrived `(from_left, from_right)`. Senders apply any periodic shift.
    fn exchange(
        &mut self,
        kind: HaloKind,
        step: u64,
        to_left: &[Particle],
        to_right: &[Particle],
    ) -> Result<(Vec<Particle>, Vec<Particle>), SimError>;

    /// Element-wise sum over all ranks, summed in rank order on every rank.
    fn allreduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, SimError>;
}

/// Single-rank halo: the rank is its own left and right neighbour.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalHalo;

impl Halo for LocalHalo {
    fn rank(&self) -> usize {
        0
    }

    fn rank_count(&self) -> usize {
        1
    }

    fn exchange(
        &mut self,
        _kind: HaloKind,
        _step: u64,
        to_left: &[Particle],
        to_right: &[Particle],
    ) -> Result<(Vec<Particle>, Vec<Particle>), SimError> {
        Ok((to_right.to_vec(), to_left.to_vec()))
    }

    fn allreduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, SimError> {
        Ok(values.to_vec())
    }
}

/// Halo over a socket [`Mesh`] with periodic slab neighbours.
pub struct MeshHalo {
    mesh: Mesh,
}

impl MeshHalo {
    pub fn new(mesh: Mesh) -> Self {
        Self { mesh }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> Mesh {
        self.mesh
    }

    fn left(&self) -> usize {
        (self.mesh.rank() + self.mesh.size() - 1) % self.mesh.size()
    }

    fn right(&self) -> usize {
        (self.mesh.rank() + 1) % self.mesh.size()
    }

    fn read_halo(&mut self, peer: usize) -> Result<(u8, u8, u64, Vec<Particle>), SimError> {
        let link = self.mesh.link(peer)?;
        let mut header = [0u8; HALO_HEADER_LEN];
        link.read_exact(&mut header)?;
        let mut r = WireReader::new(&header);
        r.expect_magic(HALO_MAGIC)?;
        let kind = r.u8()?;
        let dir = r.u8()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let body = link.receiver_mut().read_vec(count * RECORD_LEN)?;
        let mut r = WireReader::new(&body);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.u32()?;
            let mut p = Particle {
                id,
                pos: [0.0; 3],
                vel: [0.0; 3],
                force: [0.0; 3],
            };
            for v in p.pos.iter_mut().chain(p.vel.iter_mut()).chain(p.force.iter_mut()) {
                *v = r.f64()?;
            }
            out.push(p);
        }
        Ok((kind, dir, step, out))
    }
}

fn encode_halo(kind: HaloKind, dir: u8, step: u64, particles: &[Particle]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HALO_HEADER_LEN + particles.len() * RECORD_LEN);
    out.extend_from_slice(HALO_MAGIC);
    put_u8(&mut out, kind as u8);
    put_u8(&mut out, dir);
    put_u64(&mut out, step);
    put_u32(&mut out, particles.len() as u32);
    for p in particles {
        put_u32(&mut out, p.id);
        for v in p.pos.iter().chain(p.vel.iter()).chain(p.force.iter()) {
            put_f64(&mut out, *v);
        }
    }
    out
}

fn protocol(msg: String) -> SimError {
    SimError::Halo(NetError::Protocol(msg))
}

impl Halo for MeshHalo {
    fn rank(&self) -> usize {
        self.mesh.rank()
    }

    fn rank_count(&self) -> usize {
        self.mesh.size()
    }

    fn exchange(
        &mut self,
        kind: HaloKind,
        step: u64,
        to_left: &[Particle],
        to_right: &[Particle],
    ) -> Result<(Vec<Particle>, Vec<Particle>), SimError> {
        let (left, right) = (self.left(), self.right());
        self.mesh.send(left, encode_halo(kind, GOING_LEFT, step, to_left))?;
        self.mesh.send(right, encode_halo(kind, GOING_RIGHT, step, to_right))?;

        let mut from_left = None;
        let mut from_right = None;
        let expected = if left == right { vec![left, left] } else { vec![left, right] };
        for peer in expected {
            let (k, dir, s, parts) = self.read_halo(peer)?;
            if k != kind as u8 || s != step {
                return Err(protocol(format!(
                    "halo from rank {peer}: kind {k} step {s}, expected kind {} step {step}",
                    kind as u8
                )));
            }
            // what travels right arrives from our left neighbour
            let slot = if dir == GOING_RIGHT { &mut from_left } else { &mut from_right };
            if slot.replace(parts).is_some() {
                return Err(protocol(format!("duplicate halo direction {dir} from rank {peer}")));
            }
        }
        match (from_left, from_right) {
            (Some(l), Some(r)) => Ok((l, r)),
            _ => Err(protocol("incomplete halo exchange".into())),
        }
    }

    fn allreduce_sum(&mut self, values: &[f64]) -> Result<Vec<f64>, SimError> {
        let n = values.len();
        let encode = |vals: &[f64]| {
            let mut out = Vec::with_capacity(8 + 8 * n);
            out.extend_from_slice(REDUCE_MAGIC);
            put_u32(&mut out, vals.len() as u32);
            for v in vals {
                put_f64(&mut out, *v);
            }
            out
        };
        let read = |mesh: &mut Mesh, peer: usize| -> Result<Vec<f64>, SimError> {
            let link = mesh.link(peer)?;
            let mut header = [0u8; 8];
            link.read_exact(&mut header)?;
            let mut r = WireReader::new(&header);
            r.expect_magic(REDUCE_MAGIC)?;
            let len = r.u32()? as usize;
            if len != n {
                return Err(protocol(format!("reduce length {len} from rank {peer}, expected {n}")));
            }
            let body = link.receiver_mut().read_vec(8 * len)?;
            let mut r = WireReader::new(&body);
            (0..len).map(|_| r.f64().map_err(SimError::from)).collect()
        };

        if self.mesh.rank() == 0 {
            let mut acc = values.to_vec();
            for peer in 1..self.mesh.size() {
                let part = read(&mut self.mesh, peer)?;
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
            for peer in 1..self.mesh.size() {
                self.mesh.send(peer, encode(&acc))?;
            }
            Ok(acc)
        } else {
            self.mesh.send(0, encode(values))?;
            read(&mut self.mesh, 0)
        }
    }
}
