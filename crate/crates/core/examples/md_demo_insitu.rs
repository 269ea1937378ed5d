//! Plain Lennard-Jones MD loop printing energies.

use insitu_core::{sim::{LocalHalo, SimConfig, SimState}, InSitu};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let n = 1000;
    let config = SimConfig::new(n, SimConfig::box_for_density(n, 0.6), 0.002);
    let mut halo = LocalHalo;
    let mut sim = InSitu::attach(SimState::init(&config, 0)?)?;
    for _ in 0..steps {
        sim.step(&mut halo)?;
        if sim.sim_step() % 100 == 0 {
            let (kinetic, potential) = sim.total_energy(&mut halo)?;
            println!("step {:>6}  E = {:.6}", sim.sim_step(), kinetic + potential);
        }
    }
    Ok(())
}
