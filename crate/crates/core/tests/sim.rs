use std::thread;

use insitu_core::net::Mesh;
use insitu_core::sim::{Halo, LocalHalo, MeshHalo, Particle, SimConfig, SimState};
use proptest::prelude::*;

/// All-pairs minimum-image truncated-and-shifted LJ: forces and total
/// potential, indexed by particle id.
fn brute_force(pos: &[[f64; 3]], l: f64, rc: f64) -> (Vec<[f64; 3]>, f64) {
    let shift = 4.0 * (rc.powi(-12) - rc.powi(-6));
    let mut f = vec![[0.0; 3]; pos.len()];
    let mut u = 0.0;
    for i in 0..pos.len() {
        for j in (i + 1)..pos.len() {
            let mut d = [0.0; 3];
            for k in 0..3 {
                let x = pos[i][k] - pos[j][k];
                d[k] = x - l * (x / l).round();
            }
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if r >= rc {
                continue;
            }
            u += 4.0 * (r.powi(-12) - r.powi(-6)) - shift;
            // -dU/dr along d
            let mag = (48.0 * r.powi(-13) - 24.0 * r.powi(-7)) / r;
            for k in 0..3 {
                f[i][k] += mag * d[k];
                f[j][k] -= mag * d[k];
            }
        }
    }
    (f, u)
}

fn by_id(ps: &[Particle], n: usize) -> Vec<Particle> {
    let mut out = vec![None; n];
    for p in ps {
        out[p.id as usize] = Some(*p);
    }
    out.into_iter().map(|p| p.expect("every id present")).collect()
}

fn lattice(n: usize, l: f64, jitter: &[f64]) -> Vec<([f64; 3], [f64; 3])> {
    let side = (n as f64).cbrt().ceil() as usize;
    let a = l / side as f64;
    (0..n)
        .map(|g| {
            let idx = [g % side, (g / side) % side, g / (side * side)];
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = (idx[k] as f64 + 0.5) * a + jitter[(3 * g + k) % jitter.len()] * a;
            }
            (p, [0.0; 3])
        })
        .collect()
}

fn assert_forces_match(state: &mut SimState, tol_rel: f64) {
    state.ensure_forces(&mut LocalHalo).unwrap();
    let n = state.particles().len();
    let l = state.config().box_length;
    let ps = by_id(state.particles(), n);
    let pos: Vec<[f64; 3]> = ps.iter().map(|p| p.pos).collect();
    let (f, u) = brute_force(&pos, l, state.config().cutoff);
    for (p, want) in ps.iter().zip(&f) {
        for k in 0..3 {
            let err = (p.force[k] - want[k]).abs();
            assert!(err <= tol_rel * want[k].abs().max(1.0), "id {} axis {k}: {} vs {}", p.id, p.force[k], want[k]);
        }
    }
    let (_, got_u) = state.total_energy(&mut LocalHalo).unwrap();
    assert!((got_u - u).abs() <= tol_rel * u.abs().max(1.0), "{got_u} vs {u}");
}

#[test]
fn lattice_forces_match_all_pairs() {
    let cfg = SimConfig::new(64, 6.0, 0.001);
    let mut s = SimState::init(&cfg, 0).unwrap();
    assert_forces_match(&mut s, 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cell_list_forces_match_all_pairs(
        n in 8usize..=256,
        density in 0.2f64..0.9,
        jitter in prop::collection::vec(-0.2f64..0.2, 3..64),
    ) {
        let l = SimConfig::box_for_density(n, density).max(5.2);
        let cfg = SimConfig::new(n, l, 0.001);
        let mut s = SimState::from_particles(&cfg, 0, lattice(n, l, &jitter)).unwrap();
        assert_forces_match(&mut s, 1e-10);
    }
}

fn total_energy(s: &mut SimState) -> f64 {
    let (k, u) = s.total_energy(&mut LocalHalo).unwrap();
    k + u
}

#[test]
fn nve_energy_drift_is_small() {
    let l = SimConfig::box_for_density(100, 0.3);
    let cfg = SimConfig::new(100, l, 0.001);
    let mut s = SimState::init(&cfg, 0).unwrap();
    let e0 = total_energy(&mut s);
    for _ in 0..1000 {
        s.step(&mut LocalHalo).unwrap();
    }
    let e1 = total_energy(&mut s);
    let drift = (e1 - e0).abs() / e0.abs();
    assert!(drift < 1e-3, "relative drift {drift}");
    // the engine's energy agrees with the all-pairs oracle
    let ps = by_id(s.particles(), 100);
    let (_, u) = brute_force(&ps.iter().map(|p| p.pos).collect::<Vec<_>>(), l, cfg.cutoff);
    let (_, got) = s.total_energy(&mut LocalHalo).unwrap();
    assert!((got - u).abs() < 1e-10 * u.abs().max(1.0));
}

#[test]
fn momentum_is_conserved() {
    let l = SimConfig::box_for_density(216, 0.6);
    let cfg = SimConfig::new(216, l, 0.002);
    let mut s = SimState::init(&cfg, 0).unwrap();
    for _ in 0..200 {
        s.step(&mut LocalHalo).unwrap();
    }
    let m = s.local_momentum();
    assert!(m.iter().all(|v| v.abs() < 1e-9), "{m:?}");
}

#[test]
fn thermostat_pins_temperature() {
    let l = SimConfig::box_for_density(216, 0.6);
    let mut cfg = SimConfig::new(216, l, 0.002);
    cfg.target_temperature = Some(1.5);
    let mut s = SimState::init(&cfg, 0).unwrap();
    for _ in 0..20 {
        s.step(&mut LocalHalo).unwrap();
    }
    let (k, _) = s.total_energy(&mut LocalHalo).unwrap();
    let t = 2.0 * k / (3.0 * 216.0);
    assert!((t - 1.5).abs() < 1e-9, "{t}");
}

/// Runs `steps` on `k` ranks in threads and returns all particles by id.
fn run_ranks(cfg: &SimConfig, k: usize, steps: u64) -> Vec<Particle> {
    let mut cfg = cfg.clone();
    cfg.rank_count = k;
    let mut out: Vec<Particle> = if k == 1 {
        let mut s = SimState::init(&cfg, 0).unwrap();
        for _ in 0..steps {
            s.step(&mut LocalHalo).unwrap();
        }
        s.particles().to_vec()
    } else {
        let meshes = Mesh::in_process(k).unwrap();
        thread::scope(|sc| {
            let hs: Vec<_> = meshes
                .into_iter()
                .enumerate()
                .map(|(r, m)| {
                    let cfg = &cfg;
                    sc.spawn(move || {
                        let mut halo = MeshHalo::new(m);
                        let mut s = SimState::init(cfg, r).unwrap();
                        for _ in 0..steps {
                            s.step(&mut halo as &mut dyn Halo).unwrap();
                        }
                        s.particles().to_vec()
                    })
                })
                .collect();
            hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
        })
    };
    out.sort_by_key(|p| p.id);
    out
}

#[test]
fn decomposition_does_not_change_trajectories() {
    let mut cfg = SimConfig::new(1000, SimConfig::box_for_density(1000, 0.5), 0.002);
    cfg.seed = 3;
    let one = run_ranks(&cfg, 1, 100);
    for k in [2, 4] {
        let many = run_ranks(&cfg, k, 100);
        assert_eq!(many.len(), one.len());
        let l = cfg.box_length;
        let worst = one
            .iter()
            .zip(&many)
            .flat_map(|(a, b)| {
                assert_eq!(a.id, b.id);
                (0..3).map(move |c| {
                    let d = (a.pos[c] - b.pos[c]).abs();
                    d.min(l - d)
                })
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "k = {k}: worst coordinate difference {worst}");
    }
}

#[test]
fn migration_keeps_particles_in_their_slabs() {
    let mut cfg = SimConfig::new(512, SimConfig::box_for_density(512, 0.5), 0.004);
    cfg.rank_count = 2;
    let meshes = Mesh::in_process(2).unwrap();
    let counts: Vec<usize> = thread::scope(|sc| {
        let hs: Vec<_> = meshes
            .into_iter()
            .enumerate()
            .map(|(r, m)| {
                let cfg = &cfg;
                sc.spawn(move || {
                    let mut halo = MeshHalo::new(m);
                    let mut s = SimState::init(cfg, r).unwrap();
                    for _ in 0..100 {
                        s.step(&mut halo).unwrap();
                        assert!(s.particles().iter().all(|p| s.domain().contains(p.pos[0])));
                    }
                    s.particles().len()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(counts.iter().sum::<usize>(), 512);
}
