use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::net::wire::WireReader;
use crate::net::{Link, LinkReceiver, LinkSender, NetError};

use super::command::{
    Ack, CommandKind, SteeringCommand, COMMAND_FIXED_LEN, COMMAND_MAGIC, DEPARTURE_SEQ, WATERMARK_MAGIC,
};
use super::SteerError;

#[derive(Default)]
struct InboxState {
    pending: Vec<SteeringCommand>,
    watermark: u64,
    closed: Option<String>,
}

struct Shared {
    state: Mutex<InboxState>,
    arrived: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, InboxState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// A rank's steering inbox. A background thread receives and acknowledges
/// commands; the simulation drains them only between steps.
pub struct Inbox {
    shared: Arc<Shared>,
    rank: u16,
    tx: LinkSender,
    late: AtomicU64,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

fn receive_loop(
    rank: u16,
    mut rx: LinkReceiver,
    tx: LinkSender,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
) {
    let result = (|| -> Result<(), NetError> {
        loop {
            let magic = match rx.read_array::<4>() {
                Ok(m) => m,
                Err(NetError::Timeout { .. }) if !stop.load(Ordering::Acquire) => continue,
                Err(NetError::Timeout { .. }) => return Ok(()),
                Err(e) => return Err(e),
            };
            rx.set_timeout(None)?;
            if &magic == COMMAND_MAGIC {
                let mut fixed = magic.to_vec();
                fixed.extend(rx.read_vec(COMMAND_FIXED_LEN - 4)?);
                let total = SteeringCommand::wire_len(&fixed).unwrap_or(COMMAND_FIXED_LEN);
                fixed.extend(rx.read_vec(total - COMMAND_FIXED_LEN)?);
                let (cmd, _) = SteeringCommand::decode(&fixed)?;
                tx.send(Ack { rank, seq: cmd.seq }.encode())?;
                shared.lock().pending.push(cmd);
            } else if &magic == WATERMARK_MAGIC {
                let body = rx.read_array::<8>()?;
                let w = WireReader::new(&body).u64()?;
                let mut st = shared.lock();
                st.watermark = st.watermark.max(w);
            } else {
                return Err(NetError::BadMagic {
                    expected: *COMMAND_MAGIC,
                    got: magic,
                });
            }
            shared.arrived.notify_all();
            rx.set_timeout(Some(Duration::from_millis(100)))?;
        }
    })();
    let mut st = shared.lock();
    st.closed = Some(match result {
        Ok(()) => "inbox closed".to_string(),
        Err(e) => e.to_string(),
    });
    drop(st);
    shared.arrived.notify_all();
}

impl Inbox {
    pub fn new(link: Link, rank: usize) -> Result<Inbox, SteerError> {
        let (tx, rx) = link.split();
        let ack_tx = tx.clone();
        rx.set_timeout(Some(Duration::from_millis(100)))?;
        let shared = Arc::new(Shared {
            state: Mutex::new(InboxState::default()),
            arrived: Condvar::new(),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || receive_loop(rank as u16, rx, tx, shared, stop))
        };
        Ok(Inbox {
            shared,
            rank: rank as u16,
            tx: ack_tx,
            late: AtomicU64::new(0),
            stop,
            thread: Some(thread),
        })
    }

    pub fn watermark(&self) -> u64 {
        self.shared.lock().watermark
    }

    /// Blocks until the bus guarantees that every command due at `step` has
    /// arrived.
    pub fn wait_ready(&self, step: u64, timeout: Duration) -> Result<(), SteerError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.lock();
        loop {
            if st.watermark >= step {
                return Ok(());
            }
            if let Some(reason) = &st.closed {
                return Err(SteerError::Closed(reason.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SteerError::Timeout(format!(
                    "no steering watermark for step {step} (have {})",
                    st.watermark
                )));
            }
            st = self
                .shared
                .arrived
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Removes and returns every command due at or before `current_step`, in
    /// seq order. Commands whose step already passed are counted as late.
    pub fn poll_inbox(&self, current_step: u64) -> Vec<SteeringCommand> {
        let mut st = self.shared.lock();
        let (due, rest): (Vec<_>, Vec<_>) = st
            .pending
            .drain(..)
            .partition(|c| c.apply_at_step <= current_step);
        st.pending = rest;
        let late = due.iter().filter(|c| c.apply_at_step < current_step).count();
        self.late.fetch_add(late as u64, Ordering::Relaxed);
        due
    }

    /// For a paused rank: waits up to `timeout` for a Resume or Terminate and
    /// returns it together with every pending command sequenced before it.
    ///
    /// The step counter is frozen while paused, so these are applied at the
    /// frozen boundary; every rank makes the same cut because it is decided
    /// by sequence number alone.
    pub fn take_release(&self, timeout: Duration) -> Result<Vec<SteeringCommand>, SteerError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.lock();
        loop {
            let release = st
                .pending
                .iter()
                .find(|c| matches!(c.kind, CommandKind::Resume | CommandKind::Terminate))
                .map(|c| c.seq);
            if let Some(seq) = release {
                let (now, later): (Vec<_>, Vec<_>) =
                    st.pending.drain(..).partition(|c| c.seq <= seq);
                st.pending = later;
                return Ok(now);
            }
            if let Some(reason) = &st.closed {
                return Err(SteerError::Closed(reason.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            st = self
                .shared
                .arrived
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Tells the bus this rank is done, so closing the connection is not
    /// reported as a lost rank.
    pub fn depart(&self) -> Result<(), SteerError> {
        let bye = Ack {
            rank: self.rank,
            seq: DEPARTURE_SEQ,
        };
        Ok(self.tx.send(bye.encode())?)
    }

    /// Number of commands that were applied after their apply step.
    pub fn late_count(&self) -> u64 {
        self.late.load(Ordering::Relaxed)
    }
}

impl Drop for Inbox {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
