use std::io::{self, Read, Write};
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::NetError;

/// Upper bound on how long the background writer may block on a peer that
/// stopped reading.
const WRITE_STALL_LIMIT: Duration = Duration::from_secs(10);

/// Ordered, reliable, bidirectional message link to one peer.
///
/// Sends are queued to a background writer so that symmetric exchanges
/// (both sides send, then both receive) cannot deadlock on socket buffers.
/// Receives block the caller, bounded by the configured timeout.
pub struct Link {
    peer: usize,
    sender: LinkSender,
    receiver: LinkReceiver,
}

/// The sending half of a [`Link`]; cheap to clone.
#[derive(Clone)]
pub struct LinkSender {
    peer: usize,
    tx: mpsc::Sender<Vec<u8>>,
    sent: Arc<AtomicU64>,
    broken: Arc<AtomicBool>,
    // Keeps the writer alive until the last sender is dropped.
    _writer: Arc<WriterGuard>,
}

/// The receiving half of a [`Link`].
pub struct LinkReceiver {
    peer: usize,
    stream: UnixStream,
    broken: Arc<AtomicBool>,
}

struct WriterGuard {
    handle: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for WriterGuard {
    fn drop(&mut self) {
        // All senders are gone at this point, so the writer sees a closed
        // channel once it has flushed what is queued.
        if let Some(h) = self.handle.lock().ok().and_then(|mut g| g.take()) {
            let _ = h.join();
        }
    }
}

impl Link {
    pub fn new(stream: UnixStream, peer: usize) -> io::Result<Self> {
        let write_stream = stream.try_clone()?;
        write_stream.set_write_timeout(Some(WRITE_STALL_LIMIT))?;
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let broken = Arc::new(AtomicBool::new(false));
        let sent = Arc::new(AtomicU64::new(0));
        let writer_broken = Arc::clone(&broken);
        let handle = std::thread::Builder::new()
            .name(format!("link-writer-{peer}"))
            .spawn(move || writer_loop(write_stream, rx, writer_broken))?;
        let sender = LinkSender {
            peer,
            tx,
            sent,
            broken: Arc::clone(&broken),
            _writer: Arc::new(WriterGuard {
                handle: Mutex::new(Some(handle)),
            }),
        };
        let receiver = LinkReceiver {
            peer,
            stream,
            broken,
        };
        Ok(Self {
            peer,
            sender,
            receiver,
        })
    }

    /// A connected pair of links inside one process, peer ids as given.
    pub fn pair(peer_of_first: usize, peer_of_second: usize) -> io::Result<(Link, Link)> {
        let (a, b) = UnixStream::pair()?;
        Ok((Link::new(a, peer_of_first)?, Link::new(b, peer_of_second)?))
    }

    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn send(&self, bytes: Vec<u8>) -> Result<(), NetError> {
        self.sender.send(bytes)
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), NetError> {
        self.receiver.read_exact(buf)
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), NetError> {
        self.receiver.set_timeout(timeout)
    }

    pub fn bytes_sent(&self) -> u64 {
        self.sender.bytes_sent()
    }

    pub fn sender(&self) -> LinkSender {
        self.sender.clone()
    }

    pub fn receiver_mut(&mut self) -> &mut LinkReceiver {
        &mut self.receiver
    }

    pub fn split(self) -> (LinkSender, LinkReceiver) {
        (self.sender, self.receiver)
    }

    /// Tears the underlying socket down in both directions.
    pub fn shutdown(&self) {
        let _ = self.receiver.stream.shutdown(std::net::Shutdown::Both);
    }
}

impl LinkSender {
    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn send(&self, bytes: Vec<u8>) -> Result<(), NetError> {
        if self.broken.load(Ordering::Acquire) {
            return Err(NetError::Disconnected { peer: self.peer });
        }
        let n = bytes.len() as u64;
        self.tx
            .send(bytes)
            .map_err(|_| NetError::Disconnected { peer: self.peer })?;
        self.sent.fetch_add(n, Ordering::Relaxed);
        Ok(())
    }

    pub fn bytes_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn is_broken(&self) -> bool {
        self.broken.load(Ordering::Acquire)
    }
}

impl LinkReceiver {
    pub fn peer(&self) -> usize {
        self.peer
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), NetError> {
        self.stream.set_read_timeout(timeout).map_err(NetError::Io)
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), NetError> {
        let peer = self.peer;
        self.stream.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => NetError::Timeout { peer },
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::BrokenPipe => {
                self.broken.store(true, Ordering::Release);
                NetError::Disconnected { peer }
            }
            _ => NetError::Io(e),
        })
    }

    pub fn read_vec(&mut self, len: usize) -> Result<Vec<u8>, NetError> {
        let mut v = vec![0u8; len];
        self.read_exact(&mut v)?;
        Ok(v)
    }

    pub fn read_array<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        let mut a = [0u8; N];
        self.read_exact(&mut a)?;
        Ok(a)
    }
}

fn writer_loop(mut stream: UnixStream, rx: mpsc::Receiver<Vec<u8>>, broken: Arc<AtomicBool>) {
    while let Ok(buf) = rx.recv() {
        if stream.write_all(&buf).is_err() {
            broken.store(true, Ordering::Release);
            // Drain so senders observe the broken flag rather than blocking.
            while rx.recv().is_ok() {}
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_large_exchange_does_not_deadlock() {
        let (mut a, mut b) = Link::pair(1, 0).unwrap();
        let big = vec![7u8; 4 << 20];
        a.send(big.clone()).unwrap();
        b.send(big.clone()).unwrap();
        let mut ra = vec![0u8; big.len()];
        let mut rb = vec![0u8; big.len()];
        a.read_exact(&mut ra).unwrap();
        b.read_exact(&mut rb).unwrap();
        assert_eq!(ra, big);
        assert_eq!(a.bytes_sent(), big.len() as u64);
    }

    #[test]
    fn timeout_is_reported() {
        let (mut a, _b) = Link::pair(1, 0).unwrap();
        a.set_timeout(Some(Duration::from_millis(20))).unwrap();
        let mut buf = [0u8; 4];
        assert!(matches!(a.read_exact(&mut buf), Err(NetError::Timeout { peer: 1 })));
    }

    #[test]
    fn peer_drop_is_disconnect() {
        let (mut a, b) = Link::pair(1, 0).unwrap();
        drop(b);
        let mut buf = [0u8; 4];
        assert!(matches!(a.read_exact(&mut buf), Err(NetError::Disconnected { peer: 1 })));
    }
}
