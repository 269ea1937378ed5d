//! In-situ visualization for an existing simulation loop.
//!
//! Wrapping the state is the whole integration:
//!
//! ```no_run
//! # use insitu_core::sim::{LocalHalo, SimConfig, SimState};
//! # use insitu_core::InSitu;
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! # let config = SimConfig::new(1000, 11.0, 0.002);
//! let mut sim = InSitu::attach(SimState::init(&config, 0)?)?;
//! sim.step(&mut LocalHalo)?;
//! # Ok(()) }
//! ```
//!
//! Snapshots go to shared memory every `steps_per_publish` steps, where any
//! renderer can attach. With `INSITU_LISTEN=host:port` set, a built-in
//! viewer thread renders them and streams frames there.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::render::SphereScene;
use crate::runtime::{RunSpec, RuntimeError, VizState};
use crate::shmem::{Acquire, FollowingReader, SegmentName, SegmentReader, SegmentWriter, DEFAULT_SCOPE};
use crate::sim::{Halo, SimState, StepOutcome};
use crate::stream::{FrameImage, Inbound, ServerConfig, SteerResponse, StreamServer};

pub const SCOPE_ENV: &str = "INSITU_SCOPE";
pub const LISTEN_ENV: &str = "INSITU_LISTEN";

/// A simulation state that publishes itself as it steps.
pub struct InSitu {
    state: SimState,
    writer: SegmentWriter,
    viewer: Option<Viewer>,
}

impl InSitu {
    /// Attaches with the scope and stream endpoint taken from the
    /// environment.
    pub fn attach(state: SimState) -> Result<InSitu, RuntimeError> {
        let scope = std::env::var(SCOPE_ENV).unwrap_or_else(|_| DEFAULT_SCOPE.to_string());
        let listen = std::env::var(LISTEN_ENV).ok();
        Self::attach_with(state, &scope, listen.as_deref())
    }

    pub fn attach_with(state: SimState, scope: &str, listen: Option<&str>) -> Result<InSitu, RuntimeError> {
        let name = SegmentName::new(scope, state.rank() as u32, 0);
        let mut writer = SegmentWriter::create_for(&name, state.particles().len())?;
        writer.publish(&state.snapshot())?;
        let viewer = match listen {
            Some(addr) => Some(Viewer::start(&state, &name, addr)?),
            None => None,
        };
        Ok(InSitu { state, writer, viewer })
    }

    /// Steps the simulation and publishes on publishing steps.
    pub fn step(&mut self, halo: &mut dyn Halo) -> Result<StepOutcome, RuntimeError> {
        let outcome = self.state.step(halo)?;
        if outcome == StepOutcome::Advanced && self.state.sim_step() % self.state.config().steps_per_publish == 0 {
            self.writer.publish(&self.state.snapshot())?;
        }
        Ok(outcome)
    }

    pub fn segment(&self) -> &SegmentName {
        self.writer.name()
    }

    /// The viewer's stream endpoint, if one runs.
    pub fn endpoint(&self) -> Option<std::net::SocketAddr> {
        self.viewer.as_ref().map(|v| v.addr)
    }

    pub fn into_inner(self) -> SimState {
        self.state.clone()
    }
}

impl Deref for InSitu {
    type Target = SimState;

    fn deref(&self) -> &SimState {
        &self.state
    }
}

impl DerefMut for InSitu {
    fn deref_mut(&mut self) -> &mut SimState {
        &mut self.state
    }
}

impl Drop for InSitu {
    fn drop(&mut self) {
        if let Some(v) = self.viewer.take() {
            v.stop.store(true, Ordering::Release);
            let _ = v.thread.join();
        }
    }
}

struct Viewer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<()>,
}

impl Viewer {
    fn start(state: &SimState, name: &SegmentName, listen: &str) -> Result<Viewer, RuntimeError> {
        let spec = RunSpec::new(state.config().clone());
        let (server, inbound) = StreamServer::bind(listen, ServerConfig::default())?;
        let addr = server.local_addr();
        let reader = FollowingReader::new(SegmentReader::attach(name)?);
        let viz = VizState {
            camera: spec.default_camera()?,
            radius: spec.radius,
            vmin: spec.color_range[0],
            vmax: spec.color_range[1],
            mode: spec.mode,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::Builder::new()
            .name("insitu-viewer".into())
            .spawn(move || view_loop(&spec, reader, server, inbound, viz, &flag))?;
        Ok(Viewer { addr, stop, thread })
    }
}

fn view_loop(
    spec: &RunSpec,
    mut reader: FollowingReader,
    server: StreamServer,
    inbound: Receiver<Inbound>,
    viz: VizState,
    stop: &AtomicBool,
) {
    let viz = Mutex::new(viz);
    let mut last: Option<(u64, SphereScene)> = None;
    while !stop.load(Ordering::Acquire) {
        while let Ok(msg) = inbound.try_recv() {
            match msg {
                Inbound::Viz(p) if p.validate().is_ok() => viz.lock().unwrap_or_else(|e| e.into_inner()).apply(&p),
                Inbound::Viz(_) => {}
                Inbound::Steer { client, request_id, .. } => server.respond(
                    client,
                    &SteerResponse::Rejected {
                        request_id,
                        reason: "this run has no steering bus".into(),
                    },
                ),
            }
        }
        let v = *viz.lock().unwrap_or_else(|e| e.into_inner());
        let cutoff = spec.sim.cutoff;
        match reader.acquire_with(|p| (p.sim_step, SphereScene::new(p, v.radius, cutoff))) {
            Acquire::Fresh((step, Ok(scene))) => last = Some((step, scene)),
            Acquire::Terminated => return,
            _ => {}
        }
        let Some((step, scene)) = &last else {
            thread::sleep(Duration::from_millis(5));
            continue;
        };
        let mut cmap = spec.color_map();
        cmap.set_range(v.vmin, v.vmax);
        let scene = if scene.radius() == v.radius { None } else { scene.with_radius(v.radius).ok() };
        let scene_ref = scene.as_ref().unwrap_or(&last.as_ref().expect("scene present").1);
        match scene_ref.render(&v.camera, spec.width, spec.height, &cmap) {
            Ok(img) => {
                if let Err(e) = server.publish_frame(FrameImage::Image(&img), spec.encoding, *step) {
                    log::warn!("viewer frame dropped: {e}");
                }
            }
            Err(e) => log::warn!("viewer render failed: {e}"),
        }
        thread::sleep(Duration::from_millis(15));
    }
}
