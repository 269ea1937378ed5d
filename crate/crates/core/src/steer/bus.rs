use std::collections::BTreeMap;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime};

use crate::net::{read_hello, Link, LinkSender, NetError};

use super::command::{encode_watermark, Ack, CommandKind, SteeringCommand, ACK_LEN, DEPARTURE_SEQ};
use super::SteerError;

pub const DEFAULT_DELAY_STEPS: u64 = 2;
pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankState {
    Alive,
    Lost,
}

#[derive(Debug, Clone, Copy)]
pub struct BusConfig {
    pub delay_steps: u64,
    pub ack_timeout: Duration,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            delay_steps: DEFAULT_DELAY_STEPS,
            ack_timeout: DEFAULT_ACK_TIMEOUT,
        }
    }
}

struct Pending {
    submitted: Instant,
    acked_by: Vec<bool>,
}

struct BusState {
    next_seq: u64,
    observed: Option<u64>,
    watermark: u64,
    acked: Vec<u64>,
    states: Vec<RankState>,
    departed: Vec<bool>,
    pending: BTreeMap<u64, Pending>,
    /// Submit-to-all-acked time per sequence number.
    ack_latency: BTreeMap<u64, Duration>,
}

struct Shared {
    config: BusConfig,
    senders: Vec<LinkSender>,
    state: Mutex<BusState>,
    stop: AtomicBool,
}

/// Head-node side of steering: sequences commands, fans them out to every
/// rank and tracks acknowledgements.
///
/// Besides commands the bus sends watermarks: after watermark `w` no command
/// will ever be assigned an apply step `<= w`, so a rank may run its step
/// boundary `n` once it holds a watermark `>= n` and is then guaranteed to
/// have every command due there.
pub struct SteerBus {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn mark_lost(st: &mut BusState, rank: usize) {
        if st.states[rank] == RankState::Alive && !st.departed[rank] {
            log::warn!("steering: rank {rank} lost");
            st.states[rank] = RankState::Lost;
        }
        Self::settle(st);
    }

    /// Records latency for commands every live rank has acknowledged.
    fn settle(st: &mut BusState) {
        let done: Vec<u64> = st
            .pending
            .iter()
            .filter(|(_, p)| {
                p.acked_by
                    .iter()
                    .zip(st.states.iter().zip(&st.departed))
                    .all(|(a, (s, d))| *a || *d || *s == RankState::Lost)
            })
            .map(|(seq, _)| *seq)
            .collect();
        for seq in done {
            if let Some(p) = st.pending.remove(&seq) {
                st.ack_latency.insert(seq, p.submitted.elapsed());
            }
        }
    }

    fn broadcast(&self, st: &mut BusState, bytes: &[u8]) {
        for (rank, s) in self.senders.iter().enumerate() {
            if st.states[rank] == RankState::Lost || st.departed[rank] {
                continue;
            }
            if s.send(bytes.to_vec()).is_err() {
                Self::mark_lost(st, rank);
            }
        }
    }
}

impl SteerBus {
    /// Starts a bus over one link per rank, indexed by rank.
    pub fn new(links: Vec<Link>, config: BusConfig) -> Result<SteerBus, SteerError> {
        if config.delay_steps < 2 {
            return Err(SteerError::Config("delay_steps must be at least 2".into()));
        }
        let n = links.len();
        let mut senders = Vec::with_capacity(n);
        let mut receivers = Vec::with_capacity(n);
        for link in links {
            let (s, r) = link.split();
            senders.push(s);
            receivers.push(r);
        }
        let shared = Arc::new(Shared {
            config,
            senders,
            state: Mutex::new(BusState {
                next_seq: 1,
                observed: None,
                watermark: 0,
                acked: vec![0; n],
                states: vec![RankState::Alive; n],
                departed: vec![false; n],
                pending: BTreeMap::new(),
                ack_latency: BTreeMap::new(),
            }),
            stop: AtomicBool::new(false),
        });
        let mut threads = Vec::new();
        for (rank, mut rx) in receivers.into_iter().enumerate() {
            let shared = Arc::clone(&shared);
            rx.set_timeout(Some(Duration::from_millis(100)))?;
            threads.push(std::thread::spawn(move || loop {
                if shared.stop.load(Ordering::Acquire) {
                    return;
                }
                let mut buf = [0u8; ACK_LEN];
                match rx.read_exact(&mut buf) {
                    Ok(()) => {
                        let mut st = shared.lock();
                        match Ack::decode(&buf) {
                            Ok(ack) if ack.rank as usize == rank && ack.seq == DEPARTURE_SEQ => {
                                st.departed[rank] = true;
                                Shared::settle(&mut st);
                                return;
                            }
                            Ok(ack) if ack.rank as usize == rank => {
                                st.acked[rank] = st.acked[rank].max(ack.seq);
                                if let Some(p) = st.pending.get_mut(&ack.seq) {
                                    p.acked_by[rank] = true;
                                }
                                Shared::settle(&mut st);
                            }
                            _ => {
                                log::warn!("steering: malformed ack from rank {rank}");
                                Shared::mark_lost(&mut st, rank);
                                return;
                            }
                        }
                    }
                    Err(NetError::Timeout { .. }) => {}
                    Err(_) => {
                        if !shared.stop.load(Ordering::Acquire) {
                            Shared::mark_lost(&mut shared.lock(), rank);
                        }
                        return;
                    }
                }
            }));
        }
        let monitor = Arc::clone(&shared);
        threads.push(std::thread::spawn(move || {
            while !monitor.stop.load(Ordering::Acquire) {
                std::thread::sleep(Duration::from_millis(20));
                let mut st = monitor.lock();
                let timeout = monitor.config.ack_timeout;
                let overdue: Vec<usize> = st
                    .pending
                    .values()
                    .filter(|p| p.submitted.elapsed() > timeout)
                    .flat_map(|p| {
                        p.acked_by
                            .iter()
                            .enumerate()
                            .filter(|(_, a)| !**a)
                            .map(|(r, _)| r)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                for r in overdue {
                    Shared::mark_lost(&mut st, r);
                }
            }
        }));
        Ok(SteerBus { shared, threads })
    }

    /// Accepts one steering connection per rank on a socket at `path`.
    pub fn listen(
        path: &Path,
        ranks: usize,
        checksum: [u8; 32],
        timeout: Duration,
        config: BusConfig,
    ) -> Result<SteerBus, SteerError> {
        let _ = std::fs::remove_file(path);
        let listener = UnixListener::bind(path)?;
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        let mut slots: Vec<Option<Link>> = (0..ranks).map(|_| None).collect();
        let mut connected = 0;
        while connected < ranks {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_read_timeout(Some(timeout))?;
                    let (rank, sum) = read_hello(&mut stream)?;
                    if sum != checksum {
                        return Err(NetError::ConfigMismatch { peer: rank }.into());
                    }
                    if rank >= ranks || slots[rank].is_some() {
                        return Err(SteerError::Config(format!("unexpected steering rank {rank}")));
                    }
                    stream.set_read_timeout(None)?;
                    slots[rank] = Some(Link::new(stream, rank)?);
                    connected += 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(NetError::Rendezvous(format!(
                            "{connected} of {ranks} ranks joined the steering bus"
                        ))
                        .into());
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Self::new(slots.into_iter().flatten().collect(), config)
    }

    pub fn socket_path(dir: &Path) -> PathBuf {
        dir.join("steer.sock")
    }

    pub fn rank_count(&self) -> usize {
        self.shared.senders.len()
    }

    /// Records the head's latest known simulation step and advances the
    /// watermark accordingly.
    pub fn observe(&self, step: u64) {
        let mut st = self.shared.lock();
        if st.observed.is_some_and(|o| o >= step) {
            return;
        }
        st.observed = Some(step);
        let w = step + self.shared.config.delay_steps - 1;
        if w > st.watermark {
            st.watermark = w;
            self.shared.broadcast(&mut st, &encode_watermark(w));
        }
    }

    pub fn observed_step(&self) -> Option<u64> {
        self.shared.lock().observed
    }

    /// Validates, sequences and broadcasts a command.
    pub fn submit(&self, kind: CommandKind) -> Result<SteeringCommand, SteerError> {
        kind.validate().map_err(SteerError::Rejected)?;
        let mut st = self.shared.lock();
        let observed = st.observed.unwrap_or(0);
        let apply_at_step = (observed + self.shared.config.delay_steps).max(st.watermark + 1);
        let cmd = SteeringCommand {
            seq: st.next_seq,
            kind,
            apply_at_step,
            issued_at: Some(SystemTime::now()),
        };
        st.next_seq += 1;
        let acked_by = st.states.iter().map(|s| *s == RankState::Lost).collect();
        st.pending.insert(
            cmd.seq,
            Pending {
                submitted: Instant::now(),
                acked_by,
            },
        );
        self.shared.broadcast(&mut st, &cmd.encode());
        Shared::settle(&mut st);
        Ok(cmd)
    }

    /// Smallest acknowledged sequence number over live ranks.
    pub fn low_water(&self) -> u64 {
        let st = self.shared.lock();
        st.acked
            .iter()
            .zip(&st.states)
            .filter(|(_, s)| **s == RankState::Alive)
            .map(|(a, _)| *a)
            .min()
            .unwrap_or(0)
    }

    pub fn rank_states(&self) -> Vec<RankState> {
        self.shared.lock().states.clone()
    }

    pub fn is_degraded(&self) -> bool {
        self.rank_states().contains(&RankState::Lost)
    }

    /// Time from submission until every live rank acknowledged `seq`.
    pub fn ack_latency(&self, seq: u64) -> Option<Duration> {
        self.shared.lock().ack_latency.get(&seq).copied()
    }

    /// Blocks until every live rank acknowledged `seq` or the timeout passes.
    pub fn wait_acked(&self, seq: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.ack_latency(seq).is_some() {
                return true;
            }
            if Instant::now() > deadline {
                return false;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }

    pub fn bytes_sent(&self) -> u64 {
        self.shared.senders.iter().map(|s| s.bytes_sent()).sum()
    }
}

impl Drop for SteerBus {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Opens a rank's steering connection to the bus socket.
pub fn connect_to_bus(
    path: &Path,
    rank: usize,
    checksum: [u8; 32],
    timeout: Duration,
) -> Result<Link, SteerError> {
    let mut stream: UnixStream =
        crate::net::connect_with_retry(path, Instant::now() + timeout)?;
    crate::net::send_hello(&mut stream, rank, &checksum)?;
    Ok(Link::new(stream, 0)?)
}
