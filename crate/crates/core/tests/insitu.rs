use std::time::Duration;

use insitu_core::shmem::{list_segments, Acquire, SegmentReader};
use insitu_core::sim::{LocalHalo, SimConfig, SimState};
use insitu_core::stream::{ServerMessage, StreamClient};
use insitu_core::InSitu;
use similar::{ChangeTag, TextDiff};

fn example(name: &str) -> String {
    let path = format!("{}/examples/{name}.rs", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Lines touched by a line diff, a replaced line counting once.
fn changed_lines(a: &str, b: &str) -> usize {
    let diff = TextDiff::from_lines(a, b);
    let (mut del, mut ins) = (0, 0);
    for c in diff.iter_all_changes() {
        match c.tag() {
            ChangeTag::Delete => del += 1,
            ChangeTag::Insert => ins += 1,
            ChangeTag::Equal => {}
        }
    }
    usize::max(del, ins)
}

#[test]
fn enabling_insitu_changes_two_lines() {
    let n = changed_lines(&example("md_demo_baseline"), &example("md_demo_insitu"));
    assert!(n <= 2, "{n} lines changed");
}

#[test]
fn changed_lines_counts_replacements_once() {
    assert_eq!(changed_lines("a\nb\nc\n", "a\nB\nc\n"), 1);
    assert_eq!(changed_lines("a\nb\n", "a\nb\nc\nd\n"), 2);
    assert_eq!(changed_lines("a\n", "a\n"), 0);
}

fn config() -> SimConfig {
    SimConfig::new(216, SimConfig::box_for_density(216, 0.6), 0.002)
}

#[test]
fn wrapped_state_publishes_and_cleans_up() {
    let scope = format!("ins{}", std::process::id());
    let mut cfg = config();
    cfg.steps_per_publish = 5;
    let mut sim = InSitu::attach_with(SimState::init(&cfg, 0).unwrap(), &scope, None).unwrap();
    let mut reader = SegmentReader::attach(sim.segment()).unwrap();
    for _ in 0..12 {
        sim.step(&mut LocalHalo).unwrap();
    }
    // deref reaches the simulation
    assert_eq!(sim.sim_step(), 12);
    match reader.acquire_with(|v| v.sim_step) {
        Acquire::Fresh(step) => assert_eq!(step, 10),
        other => panic!("{other:?}"),
    }
    let plain = sim.into_inner();
    assert_eq!(plain.sim_step(), 12);
    assert!(list_segments(&scope).is_empty());
}

#[test]
fn viewer_streams_frames() {
    let scope = format!("insv{}", std::process::id());
    let mut sim = InSitu::attach_with(SimState::init(&config(), 0).unwrap(), &scope, Some("127.0.0.1:0")).unwrap();
    let addr = sim.endpoint().expect("viewer bound");
    let mut client = StreamClient::connect(addr).unwrap();
    for _ in 0..5 {
        sim.step(&mut LocalHalo).unwrap();
    }
    let frame = client
        .recv_matching(Duration::from_secs(30), |m| match m {
            ServerMessage::Frame(f) => Some(f),
            _ => None,
        })
        .unwrap();
    assert_eq!((frame.width, frame.height), (256, 256));
    let px = frame.pixels().unwrap();
    assert!(px.iter().any(|p| p[3] == 255), "particles visible");
    drop(sim);
    assert!(list_segments(&scope).is_empty());
}
