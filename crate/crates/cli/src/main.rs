use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use insitu_core::render::RenderMode;
use insitu_core::runtime::{rank_main, BenchSpec, Launch, RankReport, RunSpec, CONNECT_TIMEOUT};
use insitu_core::shmem::{
    list_segments, peek_header, remove_scope, Acquire, SegmentReader, DEFAULT_SCOPE,
    FLAG_SUPERSEDED, FLAG_TERMINATED, MAGIC,
};
use insitu_core::sim::SimConfig;
use insitu_core::stream::Encoding;

#[derive(Parser)]
#[command(
    name = "insitu",
    version,
    about = "In-situ visualization and steering for a particle simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Launch a run with one process per rank.
    Run(RunArgs),
    /// Run the scripted benchmark and print its JSON report.
    Bench(BenchArgs),
    /// Run with a steering script replayed against the simulation steps.
    Replay {
        /// Lines of `<step> set <name> <value>`, `<step> pause`, `<step> resume` or `<step> terminate`.
        script: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the headers of shared-memory snapshot segments.
    Shmdump(ShmdumpArgs),
    /// One rank of a launched run.
    #[command(hide = true)]
    Rank {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Raw,
    Rle,
    Vdi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Opaque,
    Vdi,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run spec as JSON, or TOML with a `.toml` extension. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Number density used to size the box when no config gives one.
    #[arg(long, default_value_t = 0.8)]
    density: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many steps instead of waiting for a terminate command.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    steps_per_publish: Option<u64>,
    #[arg(long)]
    target_temperature: Option<f64>,
    /// Stream endpoint of the head, e.g. 0.0.0.0:7000.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    delay_steps: Option<u64>,
    #[arg(long)]
    max_fps: Option<f64>,
    /// Shared-memory namespace for this run's segments.
    #[arg(long)]
    scope: Option<String>,
    /// Directory for the rendezvous sockets and rank reports.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Write the resolved spec to stdout and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Measured frames.
    #[arg(long, default_value_t = 300)]
    frames: u64,
    #[arg(long, default_value_t = 10)]
    warmup: u64,
    #[arg(long, default_value_t = 0.5)]
    orbit_deg: f64,
    /// Frames between thermostat changes; 0 disables steering.
    #[arg(long, default_value_t = 30)]
    steer_every: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShmdumpArgs {
    #[arg(long, default_value = DEFAULT_SCOPE)]
    scope: String,
    /// Print the first records of each segment's current snapshot.
    #[arg(long, default_value_t = 0)]
    records: usize,
    /// Unlink every segment in the scope, e.g. after a crashed run.
    #[arg(long)]
    clean: bool,
}

fn build_spec(a: &RunArgs, defaults: (usize, usize)) -> Result<RunSpec> {
    let mut spec = match &a.config {
        Some(p) => RunSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let n = a.particles.unwrap_or(defaults.0);
            let mut sim = SimConfig::new(n, SimConfig::box_for_density(n, a.density), 0.002);
            sim.rank_count = defaults.1;
            RunSpec::new(sim)
        }
    };
    if let (Some(n), Some(_)) = (a.particles, &a.config) {
        spec.sim.particle_count = n;
        spec.sim.box_length = SimConfig::box_for_density(n, a.density);
    }
    let sim = &mut spec.sim;
    sim.rank_count = a.ranks.unwrap_or(sim.rank_count);
    sim.dt = a.dt.unwrap_or(sim.dt);
    sim.seed = a.seed.unwrap_or(sim.seed);
    sim.steps_per_publish = a.steps_per_publish.unwrap_or(sim.steps_per_publish);
    if a.target_temperature.is_some() {
        sim.target_temperature = a.target_temperature;
    }
    if a.steps.is_some() {
        spec.max_steps = a.steps;
    }
    if a.listen.is_some() {
        spec.listen = a.listen.clone();
    }
    spec.width = a.width.unwrap_or(spec.width);
    spec.height = a.height.unwrap_or(spec.height);
    if let Some(e) = a.encoding {
        spec.encoding = match e {
            EncodingArg::Raw => Encoding::Raw,
            EncodingArg::Rle => Encoding::Rle,
            EncodingArg::Vdi => Encoding::Vdi,
        };
    }
    if let Some(m) = a.mode {
        spec.mode = match m {
            ModeArg::Opaque => RenderMode::Opaque,
            ModeArg::Vdi => RenderMode::Vdi,
        };
    }
    if spec.encoding == Encoding::Vdi && a.mode.is_none() {
        spec.mode = RenderMode::Vdi;
    }
    spec.delay_steps = a.delay_steps.unwrap_or(spec.delay_steps);
    if a.max_fps.is_some() {
        spec.max_fps = a.max_fps;
    }
    if let Some(s) = &a.scope {
        spec.scope = s.clone();
    }
    Ok(spec)
}

fn launch(spec: &RunSpec, run_dir: Option<&Path>) -> Result<Vec<RankReport>> {
    spec.validate()?;
    let stale = list_segments(&spec.scope);
    if !stale.is_empty() {
        bail!(
            "{} segments already exist in scope {:?}; another run is using it or one crashed (`insitu shmdump --clean --scope {}` removes them)",
            stale.len(),
            spec.scope,
            spec.scope
        );
    }
    let own_dir = run_dir.is_none();
    let dir = match run_dir {
        Some(d) => d.to_path_buf(),
        None => std::env::temp_dir().join(format!("insitu-run-{}", std::process::id())),
    };
    let exe = std::env::current_exe().context("locating the insitu executable")?;
    let run = Launch::start(&exe, spec, &dir).context("starting ranks")?;
    log::info!(
        "{} ranks started, run directory {}",
        spec.sim.rank_count,
        dir.display()
    );
    if spec.listen.is_some() {
        match run.wait_endpoint(CONNECT_TIMEOUT + Duration::from_secs(5)) {
            Some(addr) => eprintln!("streaming on {addr} (TCP or WebSocket)"),
            None => log::warn!("head did not report a stream endpoint"),
        }
    }
    let result = run.finish();
    let leaked = remove_scope(&spec.scope);
    if leaked > 0 {
        log::warn!("removed {leaked} segments left behind by failed ranks");
    }
    if own_dir && result.is_ok() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    Ok(result?)
}

fn summarize(reports: &[RankReport]) {
    for r in reports {
        eprintln!(
            "rank {}: {} steps, {} snapshots, {} frames, {} steering commands applied",
            r.rank,
            r.final_step,
            r.publishes,
            r.frames,
            r.applied.len()
        );
    }
}

fn shmdump(a: &ShmdumpArgs) -> Result<()> {
    if a.clean {
        println!("removed {} segments", remove_scope(&a.scope));
        return Ok(());
    }
    let names = list_segments(&a.scope);
    if names.is_empty() {
        println!("no segments in scope {:?}", a.scope);
    }
    for name in names {
        let h = match peek_header(&name) {
            Ok(h) => h,
            Err(e) => {
                println!("{name}: {e}");
                continue;
            }
        };
        let mut flags = Vec::new();
        if h.flags & FLAG_TERMINATED != 0 {
            flags.push("terminated");
        }
        if h.flags & FLAG_SUPERSEDED != 0 {
            flags.push("superseded");
        }
        println!("{name}");
        println!(
            "  magic          {}",
            if h.magic == MAGIC { "ok" } else { "BAD" }
        );
        println!("  layout         {}", h.layout_version);
        println!("  readers        {}", h.reader_count);
        println!(
            "  generation     {}{}",
            h.generation,
            if h.generation % 2 == 1 {
                " (write in progress)"
            } else {
                ""
            }
        );
        println!("  capacity       {} bytes", h.capacity_bytes);
        println!("  particles      {}", h.particle_count);
        println!("  sim_step       {}", h.sim_step);
        println!("  sim_time       {}", h.sim_time);
        println!("  flags          {:#x} {}", h.flags, flags.join(" "));
        println!("  successor      {}", h.successor_epoch);
        if a.records > 0 {
            let mut reader = SegmentReader::attach(&name)?;
            match reader.acquire() {
                Acquire::Fresh(snap) => {
                    for (i, r) in snap.records.iter().take(a.records).enumerate() {
                        println!("  [{i}] pos {:?} vel {:?}", r.position, r.velocity);
                    }
                }
                _ => println!("  no consistent snapshot to show"),
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => {
            let spec = build_spec(&a, (8000, 1))?;
            if a.print_spec {
                println!("{}", spec.to_json());
                return Ok(());
            }
            summarize(&launch(&spec, a.run_dir.as_deref())?);
        }
        Command::Replay { script, run } => {
            let mut spec = build_spec(&run, (8000, 1))?;
            spec.steering_script = Some(
                std::fs::read_to_string(&script)
                    .with_context(|| format!("reading {}", script.display()))?,
            );
            if run.print_spec {
                println!("{}", spec.to_json());
                return Ok(());
            }
            let reports = launch(&spec, run.run_dir.as_deref())?;
            summarize(&reports);
            if reports.iter().any(|r| r.applied != reports[0].applied) {
                bail!("ranks applied different steering logs");
            }
            for s in &reports[0].submitted {
                println!(
                    "seq {} requested at step {} applied at step {}",
                    s.seq,
                    s.requested_step,
                    reports[0]
                        .applied
                        .iter()
                        .find(|(q, _)| *q == s.seq)
                        .map_or(s.apply_at_step, |a| a.1)
                );
            }
        }
        Command::Bench(b) => {
            let mut spec = build_spec(&b.run, (8000, 4))?;
            spec.bench = Some(BenchSpec {
                frames: b.frames,
                warmup_frames: b.warmup,
                orbit_deg_per_frame: b.orbit_deg,
                steer_every_frames: b.steer_every,
            });
            spec.max_steps = None;
            if b.run.print_spec {
                println!("{}", spec.to_json());
                return Ok(());
            }
            let reports = launch(&spec, b.run.run_dir.as_deref())?;
            let report = reports
                .first()
                .and_then(|r| r.bench.clone())
                .context("the head produced no benchmark report")?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(out) = &b.out {
                std::fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Shmdump(a) => shmdump(&a)?,
        Command::Rank {
            spec,
            rank,
            run_dir,
        } => {
            rank_main(&spec, rank, &run_dir).with_context(|| format!("rank {rank}"))?;
        }
    }
    Ok(())
}
