use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};
use std::thread;
use std::time::{Duration, Instant};

use crate::net::{Link, Mesh, NetError};
use crate::steer::{connect_to_bus, BusConfig, SteerBus, SteerError};

use super::rank::{run_rank, RankReport, RankWiring};
use super::{RunSpec, RuntimeError};

/// How long ranks wait for each other at startup.
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);
/// How long surviving ranks get to exit after one failed.
const FAILURE_GRACE: Duration = Duration::from_secs(5);

pub const SPEC_FILE: &str = "spec.json";
pub const ENDPOINT_FILE: &str = "endpoint";

pub fn report_path(run_dir: &Path, rank: usize) -> PathBuf {
    run_dir.join(format!("rank{rank}.json"))
}

fn bus_config(spec: &RunSpec) -> BusConfig {
    BusConfig {
        delay_steps: spec.delay_steps,
        ack_timeout: spec.ack_timeout(),
    }
}

fn mismatch_to_config(e: NetError) -> RuntimeError {
    match e {
        NetError::ConfigMismatch { peer } => {
            RuntimeError::Config(format!("run spec checksum differs from rank {peer}"))
        }
        e => e.into(),
    }
}

/// Connects rank `rank` of a multi-process run through sockets in
/// `run_dir`. Every connection checks the run spec checksum.
pub fn connect_rank(spec: &RunSpec, rank: usize, run_dir: &Path) -> Result<RankWiring, RuntimeError> {
    let k = spec.sim.rank_count;
    if rank >= k {
        return Err(RuntimeError::Config(format!("rank {rank} out of range for {k} ranks")));
    }
    let sum = spec.checksum();
    let bus_path = SteerBus::socket_path(run_dir);
    let listener = (rank == 0).then(|| {
        let path = bus_path.clone();
        let config = bus_config(spec);
        thread::spawn(move || SteerBus::listen(&path, k, sum, CONNECT_TIMEOUT, config))
    });
    let sim_mesh = if k > 1 {
        Some(Mesh::rendezvous(run_dir, "sim", rank, k, sum, CONNECT_TIMEOUT).map_err(mismatch_to_config)?)
    } else {
        None
    };
    let render_mesh = Mesh::rendezvous(run_dir, "render", rank, k, sum, CONNECT_TIMEOUT).map_err(mismatch_to_config)?;
    let steer_link = connect_to_bus(&bus_path, rank, sum, CONNECT_TIMEOUT).map_err(|e| match e {
        SteerError::Net(n) => mismatch_to_config(n),
        e => e.into(),
    })?;
    let bus = match listener {
        Some(t) => Some(
            t.join()
                .map_err(|_| RuntimeError::Config("steering bus listener panicked".into()))?
                .map_err(|e| match e {
                    SteerError::Net(n) => mismatch_to_config(n),
                    e => e.into(),
                })?,
        ),
        None => None,
    };
    Ok(RankWiring {
        rank,
        sim_mesh,
        render_mesh,
        steer_link,
        bus,
    })
}

/// Entry point of a rank process: connect, run, write the report.
pub fn rank_main(spec_path: &Path, rank: usize, run_dir: &Path) -> Result<RankReport, RuntimeError> {
    let spec = RunSpec::load(spec_path)?;
    let wiring = connect_rank(&spec, rank, run_dir)?;
    let endpoint = run_dir.join(ENDPOINT_FILE);
    let report = run_rank(&spec, wiring, |addr| {
        if let Err(e) = std::fs::write(&endpoint, addr.to_string()) {
            log::warn!("writing {}: {e}", endpoint.display());
        }
    })?;
    std::fs::write(
        report_path(run_dir, rank),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// A locally launched multi-process run.
pub struct Launch {
    pub run_dir: PathBuf,
    children: Vec<Child>,
}

impl Launch {
    /// Writes the run spec to `run_dir` and starts one `<exe> rank` process per
    /// rank.
    pub fn start(exe: &Path, spec: &RunSpec, run_dir: &Path) -> Result<Launch, RuntimeError> {
        spec.validate()?;
        std::fs::create_dir_all(run_dir)?;
        let spec_path = run_dir.join(SPEC_FILE);
        spec.save(&spec_path)?;
        let mut children = Vec::new();
        for rank in 0..spec.sim.rank_count {
            let child = Command::new(exe)
                .arg("rank")
                .arg("--spec")
                .arg(&spec_path)
                .arg("--rank")
                .arg(rank.to_string())
                .arg("--run-dir")
                .arg(run_dir)
                .spawn();
            match child {
                Ok(c) => children.push(c),
                Err(e) => {
                    for mut c in children {
                        let _ = c.kill();
                        let _ = c.wait();
                    }
                    return Err(e.into());
                }
            }
        }
        Ok(Launch {
            run_dir: run_dir.to_path_buf(),
            children,
        })
    }

    pub fn pids(&self) -> Vec<u32> {
        self.children.iter().map(Child::id).collect()
    }

    /// The head's stream endpoint, once it has bound.
    pub fn wait_endpoint(&self, timeout: Duration) -> Option<SocketAddr> {
        let deadline = Instant::now() + timeout;
        let path = self.run_dir.join(ENDPOINT_FILE);
        while Instant::now() < deadline {
            if let Some(a) = std::fs::read_to_string(&path).ok().and_then(|s| s.trim().parse().ok()) {
                return Some(a);
            }
            thread::sleep(Duration::from_millis(10));
        }
        None
    }

    /// Waits for every rank. Once one fails the rest get a grace period and
    /// are then killed.
    pub fn wait(mut self) -> Result<Vec<ExitStatus>, RuntimeError> {
        let mut statuses: Vec<Option<ExitStatus>> = vec![None; self.children.len()];
        let mut failed_at: Option<Instant> = None;
        while statuses.iter().any(Option::is_none) {
            for (c, s) in self.children.iter_mut().zip(statuses.iter_mut()) {
                if s.is_none() {
                    if let Some(st) = c.try_wait()? {
                        if !st.success() && failed_at.is_none() {
                            failed_at = Some(Instant::now());
                        }
                        *s = Some(st);
                    }
                }
            }
            if failed_at.is_some_and(|t| t.elapsed() > FAILURE_GRACE) {
                for (c, s) in self.children.iter_mut().zip(statuses.iter_mut()) {
                    if s.is_none() {
                        let _ = c.kill();
                        *s = Some(c.wait()?);
                    }
                }
            }
            thread::sleep(Duration::from_millis(5));
        }
        Ok(statuses.into_iter().flatten().collect())
    }

    /// Waits and collects every rank's report; fails if any rank did.
    pub fn finish(self) -> Result<Vec<RankReport>, RuntimeError> {
        let run_dir = self.run_dir.clone();
        let statuses = self.wait()?;
        if let Some((rank, st)) = statuses.iter().enumerate().find(|(_, s)| !s.success()) {
            return Err(RuntimeError::RankFailed {
                rank,
                reason: format!("exited with {st}"),
            });
        }
        read_reports(&run_dir, statuses.len())
    }
}

impl Drop for Launch {
    fn drop(&mut self) {
        for c in &mut self.children {
            if let Ok(None) = c.try_wait() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

pub fn read_reports(run_dir: &Path, ranks: usize) -> Result<Vec<RankReport>, RuntimeError> {
    (0..ranks)
        .map(|r| {
            let path = report_path(run_dir, r);
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Runs every rank as a thread of this process over socket pairs, for
/// tests and embedding. Shared memory, steering and compositing run exactly
/// as between processes.
pub fn run_in_process(
    spec: &RunSpec,
    on_listen: impl FnOnce(SocketAddr) + Send,
) -> Result<Vec<RankReport>, RuntimeError> {
    spec.validate()?;
    let k = spec.sim.rank_count;
    let mut sim_meshes: Vec<Option<Mesh>> = if k > 1 {
        Mesh::in_process(k)?.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut render_meshes = Mesh::in_process(k)?;
    let mut bus_links = Vec::with_capacity(k);
    let mut rank_links = Vec::with_capacity(k);
    for r in 0..k {
        let (bus_side, rank_side) = Link::pair(r, 0)?;
        bus_links.push(bus_side);
        rank_links.push(rank_side);
    }
    let mut bus = Some(SteerBus::new(bus_links, bus_config(spec))?);
    let wirings: Vec<RankWiring> = rank_links
        .into_iter()
        .enumerate()
        .rev()
        .map(|(rank, steer_link)| RankWiring {
            rank,
            sim_mesh: sim_meshes.pop().flatten(),
            render_mesh: render_meshes.pop().expect("one mesh per rank"),
            steer_link,
            bus: if rank == 0 { bus.take() } else { None },
        })
        .collect();
    let mut on_listen = Some(on_listen);
    thread::scope(|s| {
        let handles: Vec<_> = wirings
            .into_iter()
            .map(|w| {
                let rank = w.rank;
                let cb = if rank == 0 { on_listen.take() } else { None };
                let h = s.spawn(move || {
                    run_rank(spec, w, |addr| {
                        if let Some(cb) = cb {
                            cb(addr)
                        }
                    })
                });
                (rank, h)
            })
            .collect();
        let mut reports: Vec<Result<RankReport, RuntimeError>> = handles
            .into_iter()
            .map(|(rank, h)| {
                h.join().unwrap_or_else(|_| {
                    Err(RuntimeError::RankFailed {
                        rank,
                        reason: "rank thread panicked".into(),
                    })
                })
            })
            .collect();
        reports.reverse();
        reports.into_iter().collect()
    })
}
