//! In-situ visualization and computational steering for a distributed
//! particle simulation.
//!
//! Each rank runs a simulation thread and a render thread that share one
//! lock-free snapshot segment ([`shmem`]). Renderers produce per-rank
//! depth images or volumetric depth images ([`render`]) which are merged by
//! binary swap ([`composite`]); the head rank streams frames to remote
//! clients ([`stream`]) and fans their steering commands out to all ranks
//! ([`steer`]). [`runtime`] wires these together.

pub mod composite;
mod insitu;
pub mod net;
pub mod render;
pub mod runtime;
pub mod shmem;
pub mod sim;
pub mod snapshot;
pub mod steer;
pub mod stream;

pub use insitu::InSitu;
