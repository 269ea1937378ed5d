use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::messages::{ClientMessage, ServerMessage};
use super::StreamError;

/// Blocking raw-stream client, for tools and tests.
pub struct StreamClient {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl StreamClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<StreamClient, StreamError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(StreamClient {
            stream,
            buf: Vec::new(),
        })
    }

    pub fn send(&mut self, msg: &ClientMessage) -> Result<(), StreamError> {
        Ok(self.stream.write_all(&msg.encode())?)
    }

    /// Next server message, waiting at most `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<ServerMessage, StreamError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some((msg, used)) = ServerMessage::decode(&self.buf)? {
                self.buf.drain(..used);
                return Ok(msg);
            }
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if left.is_zero() {
                return Err(StreamError::Timeout);
            }
            self.stream.set_read_timeout(Some(left))?;
            let mut chunk = [0u8; 65536];
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(StreamError::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(StreamError::Timeout)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Next message matching `pick`, skipping others.
    pub fn recv_matching<T>(
        &mut self,
        timeout: Duration,
        mut pick: impl FnMut(ServerMessage) -> Option<T>,
    ) -> Result<T, StreamError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if let Some(v) = pick(self.recv(left)?) {
                return Ok(v);
            }
        }
    }
}
