use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use crate::steer::{CommandKind, RankState, VizParam};

use super::frame::{encode_payload, frame_header, Encoding, FrameImage};
use super::latency::{LatencyTracker, DEFAULT_ECHO_STALE};
use super::messages::{ClientMessage, ClientParser, StatsMessage, SteerResponse};
use super::StreamError;

/// How long a new connection may take to reveal a WebSocket handshake
/// before it is treated as a raw stream.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(200);
const POLL_INTERVAL: Duration = Duration::from_millis(2);
const WRITE_TIMEOUT: Duration = Duration::from_secs(30);

pub type ClientId = u64;

/// Client requests forwarded to the head.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Steer {
        client: ClientId,
        request_id: u64,
        kind: CommandKind,
    },
    Viz(VizParam),
}

/// Per-connection frame accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientCounters {
    pub id: ClientId,
    /// Frames handed to this client's slot; also its last frame_seq.
    pub offered: u64,
    pub sent: u64,
    /// Frames replaced in the slot before they were sent.
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub stats_interval: Duration,
    pub echo_stale: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            stats_interval: Duration::from_secs(1),
            echo_stale: DEFAULT_ECHO_STALE,
        }
    }
}

struct Payload {
    sim_step: u64,
    capture_us: u64,
    width: u16,
    height: u16,
    encoding: Encoding,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct Outbox {
    frame: Option<(u64, Arc<Payload>)>,
    stats: Option<Vec<u8>>,
    responses: VecDeque<Vec<u8>>,
    offered: u64,
    sent: u64,
    dropped: u64,
    closed: bool,
}

struct Client {
    id: ClientId,
    outbox: Mutex<Outbox>,
    ready: Condvar,
}

impl Client {
    fn counters(&self) -> ClientCounters {
        let o = self.outbox.lock().unwrap();
        ClientCounters {
            id: self.id,
            offered: o.offered,
            sent: o.sent,
            dropped: o.dropped,
        }
    }

    fn push(&self, f: impl FnOnce(&mut Outbox)) {
        let mut o = self.outbox.lock().unwrap();
        f(&mut o);
        self.ready.notify_one();
    }

    /// Waits briefly for something to send.
    fn take(&self, wait: Duration) -> Vec<Vec<u8>> {
        let mut o = self.outbox.lock().unwrap();
        if o.frame.is_none() && o.stats.is_none() && o.responses.is_empty() {
            o = self.ready.wait_timeout(o, wait).unwrap().0;
        }
        let mut out: Vec<Vec<u8>> = o.responses.drain(..).collect();
        if let Some(s) = o.stats.take() {
            out.push(s);
        }
        if let Some((seq, p)) = o.frame.take() {
            o.sent += 1;
            let mut msg = Vec::with_capacity(super::FRAME_HEADER_LEN + p.bytes.len());
            msg.extend_from_slice(&frame_header(seq, p.sim_step, p.capture_us, p.width, p.height, p.encoding, p.bytes.len()));
            msg.extend_from_slice(&p.bytes);
            out.push(msg);
        }
        out
    }
}

#[derive(Default)]
struct Board {
    fps: f64,
    sps: f64,
    ranks: Vec<RankState>,
}

struct Shared {
    clients: Mutex<Vec<Arc<Client>>>,
    latency: Mutex<LatencyTracker>,
    board: Mutex<Board>,
    inbound: Mutex<mpsc::Sender<Inbound>>,
    stop: AtomicBool,
    next_id: AtomicU64,
}

impl Shared {
    fn stats(&self) -> StatsMessage {
        let b = self.board.lock().unwrap();
        StatsMessage {
            frames_per_second: b.fps,
            sim_steps_per_second: b.sps,
            last_steer_roundtrip_ms: self.latency.lock().unwrap().roundtrip_ms().unwrap_or(f64::NAN),
            rank_states: b.ranks.clone(),
        }
    }
}

/// Head-node frame streaming service.
///
/// Accepts TCP connections; one that opens with an HTTP `GET` is upgraded
/// to WebSocket and every message travels as one binary WebSocket message,
/// otherwise messages are written back to back on the raw stream. Each
/// client has a one-frame slot where a newer frame replaces an unsent one,
/// so a slow client only ever loses frames and never slows the caller.
pub struct StreamServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl StreamServer {
    /// Binds `addr` (e.g. `127.0.0.1:0`). Client requests arrive on the
    /// returned receiver.
    pub fn bind(addr: &str, config: ServerConfig) -> Result<(StreamServer, mpsc::Receiver<Inbound>), StreamError> {
        let listener = TcpListener::bind(addr).map_err(|e| StreamError::Bind(format!("{addr}: {e}")))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            clients: Mutex::new(Vec::new()),
            latency: Mutex::new(LatencyTracker::new(Instant::now(), config.echo_stale)),
            board: Mutex::new(Board::default()),
            inbound: Mutex::new(tx),
            stop: AtomicBool::new(false),
            next_id: AtomicU64::new(1),
        });
        let accept = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("stream-accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        let ticker = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("stream-stats".into())
                .spawn(move || stats_loop(shared, config.stats_interval))?
        };
        info!("streaming on {addr}");
        Ok((
            StreamServer {
                addr,
                shared,
                threads: vec![accept, ticker],
            },
            rx,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }

    pub fn client_counters(&self) -> Vec<ClientCounters> {
        self.shared.clients.lock().unwrap().iter().map(|c| c.counters()).collect()
    }

    /// Microseconds on the clock used for capture timestamps.
    pub fn now_us(&self) -> u64 {
        self.shared.latency.lock().unwrap().now_us()
    }

    /// Offers a frame to every client. Encodes nothing when nobody is
    /// connected. Returns the number of clients offered the frame.
    pub fn publish_frame(&self, image: FrameImage<'_>, encoding: Encoding, sim_step: u64) -> Result<usize, StreamError> {
        let clients = self.shared.clients.lock().unwrap().clone();
        if clients.is_empty() {
            return Ok(0);
        }
        let (w, h) = image.size();
        if w > u16::MAX as usize || h > u16::MAX as usize {
            return Err(StreamError::InvalidArgument(format!("frame size {w}x{h}")));
        }
        let payload = Arc::new(Payload {
            sim_step,
            capture_us: self.now_us(),
            width: w as u16,
            height: h as u16,
            encoding,
            bytes: encode_payload(image, encoding)?,
        });
        for c in &clients {
            c.push(|o| {
                o.offered += 1;
                if o.frame.replace((o.offered, payload.clone())).is_some() {
                    o.dropped += 1;
                }
            });
        }
        Ok(clients.len())
    }

    /// Updates the figures reported in the periodic stats message.
    pub fn set_stats(&self, frames_per_second: f64, sim_steps_per_second: f64, rank_states: Vec<RankState>) {
        let mut b = self.shared.board.lock().unwrap();
        b.fps = frames_per_second;
        b.sps = sim_steps_per_second;
        b.ranks = rank_states;
    }

    pub fn stats(&self) -> StatsMessage {
        self.shared.stats()
    }

    pub fn roundtrip_ms(&self) -> Option<f64> {
        self.shared.latency.lock().unwrap().roundtrip_ms()
    }

    /// Queues a steering response for one client; responses are never
    /// dropped while the client is connected.
    pub fn respond(&self, client: ClientId, response: &SteerResponse) {
        let bytes = response.encode();
        if let Some(c) = self.shared.clients.lock().unwrap().iter().find(|c| c.id == client) {
            c.push(|o| o.responses.push_back(bytes));
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for c in self.shared.clients.lock().unwrap().iter() {
            c.push(|o| o.closed = true);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
                let shared = shared.clone();
                let spawned = thread::Builder::new()
                    .name(format!("stream-client-{id}"))
                    .spawn(move || {
                        match handshake(stream) {
                            Ok(t) => serve_client(id, t, &shared),
                            Err(e) => warn!("client {peer}: {e}"),
                        }
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => warn!("cannot serve {peer}: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn stats_loop(shared: Arc<Shared>, interval: Duration) {
    let mut next = Instant::now() + interval;
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            thread::sleep((next - now).min(Duration::from_millis(50)));
            continue;
        }
        next += interval;
        let bytes = shared.stats().encode();
        for c in shared.clients.lock().unwrap().iter() {
            c.push(|o| o.stats = Some(bytes.clone()));
        }
    }
}

enum Transport {
    Raw(TcpStream),
    Ws(Box<WebSocket<TcpStream>>),
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn handshake(stream: TcpStream) -> Result<Transport, StreamError> {
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
    let mut head = [0u8; 4];
    let deadline = Instant::now() + SNIFF_TIMEOUT;
    let mut seen = 0;
    while seen < 4 && Instant::now() < deadline {
        match stream.peek(&mut head) {
            Ok(0) => return Err(StreamError::Protocol("closed before sending anything".into())),
            Ok(n) => seen = n,
            Err(e) if is_timeout(&e) => break,
            Err(e) => return Err(e.into()),
        }
        if seen < 4 {
            thread::sleep(Duration::from_millis(1));
        }
    }
    let transport = if seen == 4 && &head == b"GET " {
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let ws = tungstenite::accept(stream)
            .map_err(|e| StreamError::Protocol(format!("websocket handshake: {e}")))?;
        Transport::Ws(Box::new(ws))
    } else {
        Transport::Raw(stream)
    };
    let s = match &transport {
        Transport::Raw(s) => s,
        Transport::Ws(ws) => ws.get_ref(),
    };
    s.set_read_timeout(Some(POLL_INTERVAL))?;
    Ok(transport)
}

impl Transport {
    fn send(&mut self, msg: Vec<u8>) -> Result<(), StreamError> {
        match self {
            Transport::Raw(s) => Ok(s.write_all(&msg)?),
            Transport::Ws(ws) => ws
                .send(Message::Binary(msg))
                .map_err(|e| StreamError::Protocol(format!("websocket send: {e}"))),
        }
    }

    /// Reads what has arrived. `Ok(false)` once the peer has closed.
    fn poll(&mut self, parser: &mut ClientParser) -> Result<bool, StreamError> {
        match self {
            Transport::Raw(s) => {
                let mut buf = [0u8; 4096];
                loop {
                    match s.read(&mut buf) {
                        Ok(0) => return Ok(false),
                        Ok(n) => {
                            parser.feed(&buf[..n]);
                            if n < buf.len() {
                                return Ok(true);
                            }
                        }
                        Err(e) if is_timeout(&e) => return Ok(true),
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Transport::Ws(ws) => match ws.read() {
                Ok(Message::Binary(b)) => {
                    parser.feed(&b);
                    Ok(true)
                }
                Ok(Message::Close(_)) => Ok(false),
                Ok(_) => Ok(true),
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => Ok(true),
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => Ok(false),
                Err(e) => Err(StreamError::Protocol(format!("websocket read: {e}"))),
            },
        }
    }
}

fn serve_client(id: ClientId, mut transport: Transport, shared: &Shared) {
    let client = Arc::new(Client {
        id,
        outbox: Mutex::new(Outbox::default()),
        ready: Condvar::new(),
    });
    shared.clients.lock().unwrap().push(client.clone());
    debug!("client {id} connected");
    let mut parser = ClientParser::default();
    let result = (|| -> Result<(), StreamError> {
        while !shared.stop.load(Ordering::SeqCst) && !client.outbox.lock().unwrap().closed {
            for msg in client.take(POLL_INTERVAL) {
                transport.send(msg)?;
            }
            if !transport.poll(&mut parser)? {
                return Ok(());
            }
            while let Some(msg) = parser.next_message()? {
                match msg {
                    ClientMessage::Echo(e) => {
                        shared.latency.lock().unwrap().record_echo(e.capture_us);
                    }
                    ClientMessage::Steer { request_id, kind } => {
                        let _ = shared.inbound.lock().unwrap().send(Inbound::Steer {
                            client: id,
                            request_id,
                            kind,
                        });
                    }
                    ClientMessage::Viz(p) => {
                        let _ = shared.inbound.lock().unwrap().send(Inbound::Viz(p));
                    }
                }
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => debug!("client {id} disconnected"),
        Err(e) => info!("client {id} dropped: {e}"),
    }
    shared.clients.lock().unwrap().retain(|c| c.id != id);
}
