use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::composite::{composite_frame, CompositeTopology, SwapStats, VdiLists};
use crate::net::{Link, Mesh};
use crate::render::{composite_vdi_to_image, DepthImage, RenderMode, SphereScene, Vdi};
use crate::shmem::{Acquire, FollowingReader, SegmentName, SegmentReader, SegmentWriter};
use crate::sim::{Halo, LocalHalo, MeshHalo, SimState};
use crate::steer::{CommandKind, Inbox, SteerBus, SteerError, SteeringCommand};
use crate::stream::{Encoding, FrameImage, Inbound, ServerConfig, SteerResponse, StreamServer};

use super::bench::{mean_stdev, opaque_traffic, BenchReport};
use super::params::{FrameParams, VizState, FRAME_PARAMS_LEN};
use super::{RunSpec, RuntimeError};

/// Slice length for blocking waits that must notice an abort.
const POLL: Duration = Duration::from_millis(100);
/// Longest a rank waits for the head to release its next step.
const STEER_WAIT_LIMIT: Duration = Duration::from_secs(60);
/// Per-stage compositing timeout; generous because ranks share cores.
const COMPOSITE_TIMEOUT: Duration = Duration::from_secs(60);
const STATS_PERIOD: Duration = Duration::from_secs(1);
const REPROJECT_REPEATS: usize = 5;

/// The connections one rank runs on.
pub struct RankWiring {
    pub rank: usize,
    /// Slab neighbours; `None` for a single rank.
    pub sim_mesh: Option<Mesh>,
    pub render_mesh: Mesh,
    /// This rank's end of its steering connection.
    pub steer_link: Link,
    /// The steering bus, on the head only.
    pub bus: Option<SteerBus>,
}

/// A steering command the head submitted on its own: scripted or
/// benchmark-generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub seq: u64,
    /// Step the script asked for; the head submits once it observed it.
    pub requested_step: u64,
    pub apply_at_step: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub final_step: u64,
    /// Snapshots published, the initial one included.
    pub publishes: u64,
    pub last_published_step: u64,
    /// `(seq, step)` of every applied steering command, in order.
    pub applied: Vec<(u64, u64)>,
    pub late_commands: u64,
    pub frames: u64,
    /// Frames drawn from a snapshot more than steps_per_publish behind the
    /// newest published one.
    pub lag_violations: u64,
    /// Segment epochs the renderer followed.
    pub epochs: Vec<u32>,
    /// Head only.
    pub submitted: Vec<Submission>,
    pub bench: Option<BenchReport>,
}

#[derive(Default)]
struct SimShared {
    published_step: AtomicU64,
    step: AtomicU64,
    done: AtomicBool,
    failed: AtomicBool,
    abort: AtomicBool,
}

struct SimOutcome {
    final_step: u64,
    publishes: u64,
    last_published_step: u64,
    applied: Vec<(u64, u64)>,
    late: u64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Runs one rank until Terminate, the step limit, or a failure: the
/// simulation on its own thread and the render/composite loop on the
/// calling thread, joined through shared memory. Rank 0 also runs the head
/// services. `on_listen` receives the stream endpoint once bound.
pub fn run_rank(
    spec: &RunSpec,
    wiring: RankWiring,
    on_listen: impl FnOnce(SocketAddr),
) -> Result<RankReport, RuntimeError> {
    spec.validate()?;
    let RankWiring {
        rank,
        sim_mesh,
        render_mesh,
        steer_link,
        bus,
    } = wiring;
    let k = spec.sim.rank_count;
    if render_mesh.size() != k || render_mesh.rank() != rank {
        return Err(RuntimeError::Config(format!(
            "render mesh is rank {} of {}, expected {rank} of {k}",
            render_mesh.rank(),
            render_mesh.size()
        )));
    }
    if (rank == 0) != bus.is_some() {
        return Err(RuntimeError::Config("exactly rank 0 hosts the steering bus".into()));
    }
    let state = SimState::init(&spec.sim, rank)?;
    let name = SegmentName::new(&spec.scope, rank as u32, 0);
    let mut writer = SegmentWriter::create_for(&name, state.particles().len())?;
    writer.publish(&state.snapshot())?;
    let reader = FollowingReader::new(SegmentReader::attach(&name)?);
    let shared = Arc::new(SimShared::default());
    let bus = bus.map(Arc::new);
    if let Some(b) = &bus {
        b.observe(state.sim_step());
    }
    let inbox = Inbox::new(steer_link, rank)?;
    let halo: Box<dyn Halo + Send> = match sim_mesh {
        Some(m) => Box::new(MeshHalo::new(m)),
        None => Box::new(LocalHalo),
    };

    let sim = {
        let spec = spec.clone();
        let shared = Arc::clone(&shared);
        let bus = bus.clone();
        thread::Builder::new()
            .name(format!("sim-{rank}"))
            .spawn(move || sim_loop(&spec, state, writer, halo, inbox, bus, &shared))?
    };

    let mut renderer = Renderer {
        spec,
        topo: CompositeTopology::new(k)?,
        mesh: render_mesh,
        reader,
        scene: None,
        finished_seen: false,
        frames: 0,
        lag_violations: 0,
        render_time: Duration::ZERO,
    };
    let mut submitted = Vec::new();
    let mut bench = None;
    let render_result = match &bus {
        Some(bus) => run_head(spec, &mut renderer, bus, &shared, on_listen).map(|(s, b)| {
            submitted = s;
            bench = b;
        }),
        None => renderer.follow(&shared),
    };
    if render_result.is_err() {
        shared.abort.store(true, Ordering::Release);
    }
    let sim_result = sim.join().map_err(|_| RuntimeError::RankFailed {
        rank,
        reason: "simulation thread panicked".into(),
    })?;
    let outcome = sim_result?;
    render_result?;
    renderer.reader.detach();
    Ok(RankReport {
        rank,
        final_step: outcome.final_step,
        publishes: outcome.publishes,
        last_published_step: outcome.last_published_step,
        applied: outcome.applied,
        late_commands: outcome.late,
        frames: renderer.frames,
        lag_violations: renderer.lag_violations,
        epochs: renderer.reader.epochs().to_vec(),
        submitted,
        bench,
    })
}

fn apply(state: &mut SimState, cmd: &SteeringCommand, at_step: u64) {
    if let Err(e) = state.apply_steering(cmd, at_step) {
        log::warn!("rank {}: steering command {} not applied: {e}", state.rank(), cmd.seq);
    }
}

/// Waits until every command due at `step` has arrived. `Ok(false)` means
/// the run is being aborted.
fn wait_ready(inbox: &Inbox, step: u64, shared: &SimShared) -> Result<bool, RuntimeError> {
    let deadline = Instant::now() + STEER_WAIT_LIMIT;
    loop {
        if shared.abort.load(Ordering::Acquire) {
            return Ok(false);
        }
        match inbox.wait_ready(step, POLL) {
            Ok(()) => return Ok(true),
            Err(SteerError::Timeout(_)) if Instant::now() < deadline => {}
            Err(e) => return Err(e.into()),
        }
    }
}

fn sim_loop(
    spec: &RunSpec,
    mut state: SimState,
    mut writer: SegmentWriter,
    mut halo: Box<dyn Halo + Send>,
    inbox: Inbox,
    bus: Option<Arc<SteerBus>>,
    shared: &SimShared,
) -> Result<SimOutcome, RuntimeError> {
    let spp = spec.sim.steps_per_publish;
    let mut publishes = 1;
    let mut last_published = state.sim_step();
    let mut run = || -> Result<(), RuntimeError> {
        loop {
            if state.is_terminated() || spec.max_steps.is_some_and(|m| state.sim_step() >= m) {
                return Ok(());
            }
            let next = state.sim_step() + 1;
            if !wait_ready(&inbox, next, shared)? {
                return Ok(());
            }
            for cmd in inbox.poll_inbox(next) {
                apply(&mut state, &cmd, next);
            }
            while state.is_paused() && !state.is_terminated() {
                if shared.abort.load(Ordering::Acquire) {
                    return Ok(());
                }
                for cmd in inbox.take_release(POLL)? {
                    apply(&mut state, &cmd, next);
                }
            }
            if state.is_terminated() {
                return Ok(());
            }
            state.step(halo.as_mut())?;
            let step = state.sim_step();
            shared.step.store(step, Ordering::Release);
            if step % spp == 0 {
                writer.publish(&state.snapshot())?;
                publishes += 1;
                last_published = step;
                shared.published_step.store(step, Ordering::Release);
            }
            if let Some(b) = &bus {
                b.observe(step);
            }
        }
    };
    let mut result = run();
    if result.is_ok() && last_published != state.sim_step() {
        result = writer.publish(&state.snapshot()).map(|_| ()).map_err(Into::into);
        publishes += 1;
        last_published = state.sim_step();
        shared.published_step.store(last_published, Ordering::Release);
    }
    if result.is_err() {
        shared.failed.store(true, Ordering::Release);
    } else if let Err(e) = inbox.depart() {
        log::debug!("rank {}: steering goodbye not sent: {e}", state.rank());
    }
    drop(writer);
    shared.done.store(true, Ordering::Release);
    drop(halo);
    result?;
    Ok(SimOutcome {
        final_step: state.sim_step(),
        publishes,
        last_published_step: last_published,
        applied: state.applied_log().iter().map(|a| (a.seq, a.step)).collect(),
        late: inbox.late_count(),
    })
}

enum Frame {
    Image(DepthImage),
    Vdi(Vdi),
}

struct Renderer<'a> {
    spec: &'a RunSpec,
    topo: CompositeTopology,
    mesh: Mesh,
    reader: FollowingReader,
    scene: Option<(u64, SphereScene)>,
    /// The simulation has ended and its last snapshot was taken.
    finished_seen: bool,
    frames: u64,
    lag_violations: u64,
    render_time: Duration,
}

impl Renderer<'_> {
    /// Takes the newest snapshot if there is one, building the scene
    /// straight from shared memory.
    fn refresh(&mut self, radius: f64, shared: &SimShared) -> Result<(), RuntimeError> {
        let newest = shared.published_step.load(Ordering::Acquire);
        let cutoff = self.spec.sim.cutoff;
        match self
            .reader
            .acquire_with(|v| (v.sim_step, SphereScene::new(v, radius, cutoff)))
        {
            Acquire::Fresh((step, scene)) => self.scene = Some((step, scene?)),
            Acquire::Terminated => self.finished_seen = true,
            Acquire::Unchanged | Acquire::Superseded(_) => {}
        }
        if let Some((_, s)) = &mut self.scene {
            if s.radius() != radius {
                *s = s.with_radius(radius)?;
            }
        }
        let rendered = self.scene.as_ref().map_or(0, |(s, _)| *s);
        if rendered + self.spec.sim.steps_per_publish < newest {
            self.lag_violations += 1;
        }
        Ok(())
    }

    fn scene_step(&self) -> u64 {
        self.scene.as_ref().map_or(0, |(s, _)| *s)
    }

    /// Renders the local particles and composites with the other ranks.
    /// The head gets the full frame.
    fn frame(&mut self, p: &FrameParams, mode: RenderMode) -> Result<(Option<Frame>, SwapStats), RuntimeError> {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut cmap = self.spec.color_map();
        cmap.set_range(p.viz.vmin, p.viz.vmax);
        let cam = &p.viz.camera;
        let start = Instant::now();
        let out = match mode {
            RenderMode::Opaque => {
                let local = match &self.scene {
                    Some((_, s)) => s.render(cam, w, h, &cmap)?,
                    None => DepthImage::background(w, h),
                };
                self.render_time += start.elapsed();
                let (img, stats) = composite_frame(local, &mut self.mesh, &self.topo, p.frame_seq, COMPOSITE_TIMEOUT)?;
                (img.map(Frame::Image), stats)
            }
            RenderMode::Vdi => {
                let local = match &self.scene {
                    Some((_, s)) => s.build_vdi(cam, w, h, &cmap, self.spec.opacity, self.spec.s_max)?,
                    None => Vdi::empty(w, h, *cam, self.spec.s_max),
                };
                self.render_time += start.elapsed();
                let lists = VdiLists::from(&local);
                let (v, stats) = composite_frame(lists, &mut self.mesh, &self.topo, p.frame_seq, COMPOSITE_TIMEOUT)?;
                (v.map(|l| Frame::Vdi(l.into())), stats)
            }
        };
        Ok(out)
    }

    /// Non-head render loop: draw whatever the head asks for until told to
    /// stop.
    fn follow(&mut self, shared: &SimShared) -> Result<(), RuntimeError> {
        let mut buf = [0u8; FRAME_PARAMS_LEN];
        loop {
            let link = self.mesh.link(0)?;
            link.set_timeout(None)?;
            link.read_exact(&mut buf)?;
            let p = FrameParams::decode(&buf)?;
            if p.stop {
                return Ok(());
            }
            self.refresh(p.viz.radius, shared)?;
            let mode = if p.probe { RenderMode::Vdi } else { p.viz.mode };
            self.frame(&p, mode)?;
            if !p.probe {
                self.frames += 1;
            }
        }
    }

    fn broadcast(&self, p: &FrameParams) -> Result<(), RuntimeError> {
        let aspect = self.spec.width as f64 / self.spec.height as f64;
        let bytes = p.encode(aspect);
        for peer in 1..self.mesh.size() {
            self.mesh.send(peer, bytes.clone())?;
        }
        Ok(())
    }
}

struct Services {
    stop: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<Vec<Submission>>>,
}

impl Services {
    fn finish(mut self) -> Vec<Submission> {
        self.stop.store(true, Ordering::Release);
        self.thread.take().and_then(|t| t.join().ok()).unwrap_or_default()
    }
}

impl Drop for Services {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Head-side request handling: client steering and viz messages, and the
/// steering script replayed against observed steps.
fn spawn_services(
    spec: &RunSpec,
    bus: Arc<SteerBus>,
    server: Option<Arc<StreamServer>>,
    inbound: Option<Receiver<Inbound>>,
    viz: Arc<Mutex<VizState>>,
) -> Result<Services, RuntimeError> {
    let mut script = spec.script()?.map(|s| s.entries).unwrap_or_default().into_iter().peekable();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let thread = thread::Builder::new().name("head-services".into()).spawn(move || {
        let mut submitted = Vec::new();
        while !flag.load(Ordering::Acquire) {
            let observed = bus.observed_step().unwrap_or(0);
            while let Some(entry) = script.next_if(|e| e.at_step <= observed) {
                match bus.submit(entry.kind.clone()) {
                    Ok(cmd) => submitted.push(Submission {
                        seq: cmd.seq,
                        requested_step: entry.at_step,
                        apply_at_step: cmd.apply_at_step,
                    }),
                    Err(e) => log::warn!("script command at step {} rejected: {e}", entry.at_step),
                }
            }
            let Some(rx) = &inbound else {
                thread::sleep(Duration::from_millis(2));
                continue;
            };
            match rx.recv_timeout(Duration::from_millis(5)) {
                Ok(Inbound::Steer {
                    client,
                    request_id,
                    kind,
                }) => {
                    let resp = match bus.submit(kind) {
                        Ok(cmd) => SteerResponse::Accepted {
                            request_id,
                            seq: cmd.seq,
                            apply_at_step: cmd.apply_at_step,
                        },
                        Err(e) => SteerResponse::Rejected {
                            request_id,
                            reason: e.to_string(),
                        },
                    };
                    if let Some(s) = &server {
                        s.respond(client, &resp);
                    }
                }
                Ok(Inbound::Viz(p)) => match p.validate() {
                    Ok(()) => lock(&viz).apply(&p),
                    Err(e) => log::warn!("ignoring viz parameter: {e}"),
                },
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => thread::sleep(Duration::from_millis(2)),
            }
        }
        submitted
    })?;
    Ok(Services {
        stop,
        thread: Some(thread),
    })
}

/// Benchmark bookkeeping on the head.
struct BenchRun {
    warmup: u64,
    frames: u64,
    orbit_deg: f64,
    steer_every: u64,
    base_camera: crate::render::CameraPose,
    started: Option<(Instant, u64)>,
    last_frame_end: Option<Instant>,
    rates: Vec<f64>,
    measured: u64,
    render_time: Duration,
    bytes: u64,
    steer_seqs: Vec<u64>,
    done: Option<BenchReport>,
}

fn run_head(
    spec: &RunSpec,
    r: &mut Renderer<'_>,
    bus: &Arc<SteerBus>,
    shared: &SimShared,
    on_listen: impl FnOnce(SocketAddr),
) -> Result<(Vec<Submission>, Option<BenchReport>), RuntimeError> {
    let initial = VizState {
        camera: spec.default_camera()?,
        radius: spec.radius,
        vmin: spec.color_range[0],
        vmax: spec.color_range[1],
        mode: spec.mode,
    };
    let viz = Arc::new(Mutex::new(initial));
    let (server, inbound) = match &spec.listen {
        Some(addr) => {
            let (s, rx) = StreamServer::bind(addr, ServerConfig::default())?;
            log::info!("streaming on {}", s.local_addr());
            on_listen(s.local_addr());
            (Some(Arc::new(s)), Some(rx))
        }
        None => (None, None),
    };
    let services = spawn_services(spec, Arc::clone(bus), server.clone(), inbound, Arc::clone(&viz))?;
    let mut bench = spec.bench.as_ref().map(|b| BenchRun {
        warmup: b.warmup_frames,
        frames: b.frames,
        orbit_deg: b.orbit_deg_per_frame,
        steer_every: b.steer_every_frames,
        base_camera: initial.camera,
        started: None,
        last_frame_end: None,
        rates: Vec::new(),
        measured: 0,
        render_time: Duration::ZERO,
        bytes: 0,
        steer_seqs: Vec::new(),
        done: None,
    });
    let center = spec.box_center();
    let mut seq = 0;
    let mut window = (Instant::now(), 0u64, shared.step.load(Ordering::Acquire));
    let mut fps = 0.0;
    let mut sps = 0.0;

    let result = (|| -> Result<(), RuntimeError> {
        loop {
            let frame_start = Instant::now();
            if let Some(b) = &bench {
                if b.done.is_none() {
                    let angle = b.orbit_deg * r.frames as f64;
                    lock(&viz).camera = b.base_camera.orbit(center, Vector3::y(), angle);
                }
            }
            seq += 1;
            let stop = r.finished_seen || shared.failed.load(Ordering::Acquire);
            let p = FrameParams {
                frame_seq: seq,
                stop,
                probe: false,
                viz: *lock(&viz),
            };
            r.broadcast(&p)?;
            if stop {
                return Ok(());
            }
            r.refresh(p.viz.radius, shared)?;
            let before_render = r.render_time;
            let (frame, stats) = r.frame(&p, p.viz.mode)?;
            r.frames += 1;
            if let (Some(s), Some(frame)) = (&server, &frame) {
                let step = r.scene_step();
                match frame {
                    Frame::Image(img) => {
                        let enc = if spec.encoding == Encoding::Vdi { Encoding::Rle } else { spec.encoding };
                        s.publish_frame(FrameImage::Image(img), enc, step)?;
                    }
                    Frame::Vdi(v) if spec.encoding == Encoding::Vdi => {
                        s.publish_frame(FrameImage::Vdi(v), Encoding::Vdi, step)?;
                    }
                    Frame::Vdi(v) => {
                        let img = composite_vdi_to_image(v, &v.camera);
                        s.publish_frame(FrameImage::Image(&img), spec.encoding, step)?;
                    }
                }
            }
            let now = Instant::now();
            if now - window.0 >= STATS_PERIOD {
                let dt = (now - window.0).as_secs_f64();
                let step = shared.step.load(Ordering::Acquire);
                fps = (r.frames - window.1) as f64 / dt;
                sps = step.saturating_sub(window.2) as f64 / dt;
                window = (now, r.frames, step);
                if let Some(s) = &server {
                    s.set_stats(fps, sps, bus.rank_states());
                }
                log::debug!("{fps:.1} fps, {sps:.1} steps/s");
            }
            if let Some(b) = &mut bench {
                bench_frame(spec, r, bus, shared, b, &p, now, r.render_time - before_render, stats)?;
            }
            if let Some(max) = spec.max_fps {
                let period = Duration::from_secs_f64(1.0 / max);
                if let Some(rest) = period.checked_sub(frame_start.elapsed()) {
                    thread::sleep(rest);
                }
            }
        }
    })();
    let submitted = services.finish();
    result?;
    Ok((submitted, bench.and_then(|b| b.done)))
}

#[allow(clippy::too_many_arguments)]
fn bench_frame(
    spec: &RunSpec,
    r: &mut Renderer<'_>,
    bus: &SteerBus,
    shared: &SimShared,
    b: &mut BenchRun,
    p: &FrameParams,
    now: Instant,
    render_time: Duration,
    stats: SwapStats,
) -> Result<(), RuntimeError> {
    if b.done.is_some() {
        return Ok(());
    }
    if r.frames <= b.warmup {
        if r.frames == b.warmup {
            b.started = Some((now, shared.step.load(Ordering::Acquire)));
            b.last_frame_end = Some(now);
        }
        return Ok(());
    }
    if b.started.is_none() {
        b.started = Some((now, shared.step.load(Ordering::Acquire)));
        b.last_frame_end = Some(now);
        return Ok(());
    }
    if let Some(last) = b.last_frame_end {
        let dt = (now - last).as_secs_f64();
        if dt > 0.0 {
            b.rates.push(1.0 / dt);
        }
    }
    b.last_frame_end = Some(now);
    b.measured += 1;
    b.render_time += render_time;
    b.bytes += stats.swap_bytes;
    if b.steer_every > 0 && b.measured % b.steer_every == 0 {
        // alternate the thermostat between two nearby setpoints
        let target = if (b.measured / b.steer_every) % 2 == 1 { 1.1 } else { 1.0 };
        match bus.submit(CommandKind::set("target_temperature", target)) {
            Ok(cmd) => b.steer_seqs.push(cmd.seq),
            Err(e) => log::warn!("benchmark steering rejected: {e}"),
        }
    }
    if b.measured < b.frames {
        return Ok(());
    }

    let (t0, step0) = b.started.expect("measurement started");
    let elapsed = (now - t0).as_secs_f64();
    let steps = shared.step.load(Ordering::Acquire).saturating_sub(step0);
    let (_, fps_stdev) = mean_stdev(&b.rates);
    let latencies: Vec<f64> = b
        .steer_seqs
        .iter()
        .filter_map(|&seq| {
            bus.wait_acked(seq, spec.ack_timeout());
            bus.ack_latency(seq).map(|d| d.as_secs_f64() * 1e3)
        })
        .collect();
    let (steer_latency_ms, _) = mean_stdev(&latencies);

    // one extra VDI frame, reprojected on the head
    let probe = FrameParams {
        frame_seq: p.frame_seq,
        stop: false,
        probe: true,
        viz: p.viz,
    };
    r.broadcast(&probe)?;
    let (frame, _) = r.frame(&probe, RenderMode::Vdi)?;
    let reproject_ms = match frame {
        Some(Frame::Vdi(v)) => {
            let cam = v.camera.orbit(spec.box_center(), Vector3::y(), 1.0);
            (0..REPROJECT_REPEATS)
                .map(|_| {
                    let t = Instant::now();
                    std::hint::black_box(composite_vdi_to_image(&v, &cam));
                    t.elapsed().as_secs_f64() * 1e3
                })
                .fold(f64::INFINITY, f64::min)
        }
        _ => f64::NAN,
    };

    let k = spec.sim.rank_count;
    let mut report = BenchReport {
        ranks: k,
        particles: spec.sim.particle_count,
        width: spec.width,
        height: spec.height,
        mode: p.viz.mode,
        frames: b.measured,
        fps: b.measured as f64 / elapsed,
        fps_stdev,
        sim_sps: steps as f64 / elapsed,
        steer_latency_ms,
        steer_commands: latencies.len() as u64,
        render_ms: b.render_time.as_secs_f64() * 1e3 / b.measured as f64,
        reproject_ms,
        bytes_exchanged: b.bytes,
        bytes_exchanged_per_frame: b.bytes as f64 / b.measured as f64,
        opaque_traffic_per_frame: opaque_traffic(spec.width, spec.height, k),
        warnings: Vec::new(),
    };
    report.check_targets();
    b.done = Some(report);
    bus.submit(CommandKind::Terminate)?;
    Ok(())
}
