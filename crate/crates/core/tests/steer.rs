use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use insitu_core::net::Link;
use insitu_core::steer::{BusConfig, CommandKind, Inbox, RankState, SteerBus, SteerError};
use proptest::prelude::*;

fn bus(k: usize, delay: u64) -> (SteerBus, Vec<Inbox>) {
    let mut bus_links = Vec::new();
    let mut inboxes = Vec::new();
    for r in 0..k {
        let (b, rank_side) = Link::pair(r, 0).unwrap();
        bus_links.push(b);
        inboxes.push(Inbox::new(rank_side, r).unwrap());
    }
    let config = BusConfig {
        delay_steps: delay,
        ack_timeout: Duration::from_secs(5),
    };
    (SteerBus::new(bus_links, config).unwrap(), inboxes)
}

#[test]
fn apply_step_is_observed_plus_delay() {
    let (bus, inboxes) = bus(2, 3);
    bus.observe(10);
    let a = bus.submit(CommandKind::set("dt", 0.002)).unwrap();
    let b = bus.submit(CommandKind::Pause).unwrap();
    assert_eq!(a.apply_at_step, 13);
    assert_eq!(b.apply_at_step, 13);
    assert!(b.seq > a.seq);
    for inbox in &inboxes {
        inbox.wait_ready(12, Duration::from_secs(5)).unwrap();
        assert!(inbox.poll_inbox(12).is_empty());
        assert!(bus.wait_acked(b.seq, Duration::from_secs(5)));
        let due = inbox.poll_inbox(13);
        assert_eq!(due.iter().map(|c| c.seq).collect::<Vec<_>>(), vec![a.seq, b.seq]);
        assert_eq!(inbox.late_count(), 0);
    }
}

#[test]
fn watermark_blocks_until_the_step_is_safe() {
    let (bus, inboxes) = bus(1, 2);
    bus.observe(5);
    inboxes[0].wait_ready(6, Duration::from_secs(5)).unwrap();
    let err = inboxes[0].wait_ready(7, Duration::from_millis(50)).unwrap_err();
    assert!(matches!(err, SteerError::Timeout(_)));
    bus.observe(6);
    inboxes[0].wait_ready(7, Duration::from_secs(5)).unwrap();
}

#[test]
fn delay_below_two_is_refused() {
    // with delay 1 the head could never release its own next step
    let (b, _r) = Link::pair(0, 0).unwrap();
    let config = BusConfig {
        delay_steps: 1,
        ack_timeout: Duration::from_secs(1),
    };
    assert!(matches!(SteerBus::new(vec![b], config), Err(SteerError::Config(_))));
}

#[test]
fn unknown_parameters_are_rejected() {
    let (bus, _inboxes) = bus(1, 2);
    assert!(matches!(
        bus.submit(CommandKind::set("gravity", 1.0)),
        Err(SteerError::Rejected(_))
    ));
    assert!(bus.submit(CommandKind::set("dt", -1.0)).is_err());
}

#[test]
fn lost_rank_degrades_the_bus() {
    let (bus, mut inboxes) = bus(3, 2);
    drop(inboxes.pop());
    let deadline = Instant::now() + Duration::from_secs(5);
    // a send to the closed link or its reader's EOF marks the loss
    while !bus.is_degraded() && Instant::now() < deadline {
        let _ = bus.submit(CommandKind::set("dt", 0.001));
        thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(bus.rank_states(), vec![RankState::Alive, RankState::Alive, RankState::Lost]);
    let cmd = bus.submit(CommandKind::Resume).unwrap();
    assert!(bus.wait_acked(cmd.seq, Duration::from_secs(5)));
}

#[test]
fn departed_rank_is_not_lost() {
    let (bus, mut inboxes) = bus(2, 2);
    let leaving = inboxes.pop().unwrap();
    leaving.depart().unwrap();
    thread::sleep(Duration::from_millis(50));
    drop(leaving);
    let cmd = bus.submit(CommandKind::set("dt", 0.001)).unwrap();
    assert!(bus.wait_acked(cmd.seq, Duration::from_secs(5)));
    thread::sleep(Duration::from_millis(200));
    assert!(!bus.is_degraded());
}

/// Ranks step in lockstep with the watermark while the head submits
/// commands at arbitrary moments; every rank must see every command at its
/// apply step.
fn race(k: usize, delay: u64, submissions: &[(u8, u64)]) {
    const STEPS: u64 = 60;
    let (bus, inboxes) = bus(k, delay);
    bus.observe(0);
    let head_step = AtomicU64::new(0);
    let logs: Vec<Vec<(u64, u64, u64)>> = thread::scope(|sc| {
        let ranks: Vec<_> = inboxes
            .into_iter()
            .enumerate()
            .map(|(r, inbox)| {
                let head_step = &head_step;
                let bus = &bus;
                sc.spawn(move || {
                    let mut log = Vec::new();
                    for n in 1..=STEPS {
                        inbox.wait_ready(n, Duration::from_secs(10)).unwrap();
                        for c in inbox.poll_inbox(n) {
                            log.push((c.seq, c.apply_at_step, n));
                        }
                        if r == 0 {
                            head_step.store(n, Ordering::Release);
                            bus.observe(n);
                        }
                    }
                    assert_eq!(inbox.late_count(), 0);
                    log
                })
            })
            .collect();
        for &(kind, pause_us) in submissions {
            thread::sleep(Duration::from_micros(pause_us));
            if head_step.load(Ordering::Acquire) + delay > STEPS {
                break;
            }
            let kind = match kind % 3 {
                0 => CommandKind::set("dt", 0.001),
                1 => CommandKind::set("target_temperature", 1.2),
                _ => CommandKind::Pause,
            };
            bus.submit(kind).unwrap();
        }
        // keep the watermark moving past the end
        while head_step.load(Ordering::Acquire) < STEPS {
            thread::sleep(Duration::from_millis(1));
        }
        ranks.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for log in &logs {
        assert_eq!(log, &logs[0]);
        for &(_, due, at) in log {
            assert_eq!(due, at);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn commands_land_on_the_same_step_everywhere(
        k in 1usize..=4,
        delay in 2u64..=5,
        subs in prop::collection::vec((any::<u8>(), 0u64..400), 1..30),
    ) {
        race(k, delay, &subs);
    }
}
