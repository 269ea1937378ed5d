use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::wire::{put_u16, WireReader};
use super::{Link, NetError};

const HELLO_MAGIC: &[u8; 4] = b"HELO";
const HELLO_LEN: usize = 4 + 2 + 32;

/// Fully connected set of links between `size` ranks on one channel.
///
/// Stands in for an MPI communicator: every rank holds one [`Link`] per peer.
pub struct Mesh {
    rank: usize,
    size: usize,
    links: Vec<Option<Link>>,
}

impl Mesh {
    /// Builds `size` meshes connected through socket pairs, one per rank.
    pub fn in_process(size: usize) -> Result<Vec<Mesh>, NetError> {
        let mut slots: Vec<Vec<Option<Link>>> =
            (0..size).map(|_| (0..size).map(|_| None).collect()).collect();
        for i in 0..size {
            for j in (i + 1)..size {
                let (a, b) = Link::pair(j, i)?;
                slots[i][j] = Some(a);
                slots[j][i] = Some(b);
            }
        }
        Ok(slots
            .into_iter()
            .enumerate()
            .map(|(rank, links)| Mesh { rank, size, links })
            .collect())
    }

    /// Connects this rank to all peers through sockets in `dir`.
    ///
    /// Every rank listens on `<dir>/<channel>.<rank>.sock`, dials all lower
    /// ranks and accepts all higher ones. Each connection opens with a hello
    /// carrying the run configuration checksum; a mismatch aborts.
    pub fn rendezvous(
        dir: &Path,
        channel: &str,
        rank: usize,
        size: usize,
        checksum: [u8; 32],
        timeout: Duration,
    ) -> Result<Mesh, NetError> {
        let own = socket_path(dir, channel, rank);
        let _ = std::fs::remove_file(&own);
        let listener = UnixListener::bind(&own)?;
        let deadline = Instant::now() + timeout;
        let mut links: Vec<Option<Link>> = (0..size).map(|_| None).collect();

        for peer in 0..rank {
            let path = socket_path(dir, channel, peer);
            let mut stream = connect_with_retry(&path, deadline)?;
            stream.set_read_timeout(Some(timeout))?;
            send_hello(&mut stream, rank, &checksum)?;
            let (their_rank, their_sum) = read_hello(&mut stream)?;
            if their_rank != peer {
                return Err(NetError::Protocol(format!(
                    "expected hello from rank {peer}, got rank {their_rank}"
                )));
            }
            if their_sum != checksum {
                return Err(NetError::ConfigMismatch { peer });
            }
            stream.set_read_timeout(None)?;
            links[peer] = Some(Link::new(stream, peer)?);
        }

        listener.set_nonblocking(true)?;
        let mut pending = size - rank - 1;
        while pending > 0 {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_read_timeout(Some(timeout))?;
                    let (peer, sum) = read_hello(&mut stream)?;
                    if peer <= rank || peer >= size || links[peer].is_some() {
                        return Err(NetError::Protocol(format!(
                            "unexpected hello from rank {peer} at rank {rank}"
                        )));
                    }
                    send_hello(&mut stream, rank, &checksum)?;
                    if sum != checksum {
                        return Err(NetError::ConfigMismatch { peer });
                    }
                    stream.set_read_timeout(None)?;
                    links[peer] = Some(Link::new(stream, peer)?);
                    pending -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(NetError::Rendezvous(format!(
                            "rank {rank} timed out waiting for {pending} peers on {channel}"
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let _ = std::fs::remove_file(&own);
        Ok(Mesh { rank, size, links })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn link(&mut self, peer: usize) -> Result<&mut Link, NetError> {
        self.links
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or(NetError::NoSuchPeer { peer })
    }

    pub fn send(&self, peer: usize, bytes: Vec<u8>) -> Result<(), NetError> {
        self.links
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or(NetError::NoSuchPeer { peer })?
            .send(bytes)
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), NetError> {
        for link in self.links.iter().flatten() {
            link.set_timeout(timeout)?;
        }
        Ok(())
    }

    /// Total payload bytes queued to all peers since creation.
    pub fn bytes_sent(&self) -> u64 {
        self.links.iter().flatten().map(Link::bytes_sent).sum()
    }

    /// Removes the link to `peer`, e.g. to simulate or react to its loss.
    pub fn take_link(&mut self, peer: usize) -> Option<Link> {
        self.links.get_mut(peer).and_then(Option::take)
    }
}

pub fn socket_path(dir: &Path, channel: &str, rank: usize) -> PathBuf {
    dir.join(format!("{channel}.{rank}.sock"))
}

pub(crate) fn connect_with_retry(path: &Path, deadline: Instant) -> Result<UnixStream, NetError> {
    loop {
        match UnixStream::connect(path) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() > deadline {
                    return Err(NetError::Rendezvous(format!(
                        "could not connect to {}: {e}",
                        path.display()
                    )));
                }
                std::thread::sleep(Duration::from_millis(2));
            }
        }
    }
}

pub(crate) fn send_hello(
    stream: &mut UnixStream,
    rank: usize,
    checksum: &[u8; 32],
) -> Result<(), NetError> {
    use std::io::Write;
    let mut buf = Vec::with_capacity(HELLO_LEN);
    buf.extend_from_slice(HELLO_MAGIC);
    put_u16(&mut buf, rank as u16);
    buf.extend_from_slice(checksum);
    stream.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_hello(stream: &mut UnixStream) -> Result<(usize, [u8; 32]), NetError> {
    use std::io::Read;
    let mut buf = [0u8; HELLO_LEN];
    stream.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
            NetError::Rendezvous("timed out waiting for hello".into())
        }
        _ => NetError::Io(e),
    })?;
    let mut r = WireReader::new(&buf);
    r.expect_magic(HELLO_MAGIC)?;
    let rank = r.u16()? as usize;
    let sum = r.array::<32>()?;
    Ok((rank, sum))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendezvous_connects_all_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let size = 4;
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let dir = dir.path().to_path_buf();
                std::thread::spawn(move || {
                    let mut mesh =
                        Mesh::rendezvous(&dir, "t", rank, size, [1; 32], Duration::from_secs(5))
                            .unwrap();
                    for peer in 0..size {
                        if peer != rank {
                            mesh.send(peer, vec![rank as u8]).unwrap();
                        }
                    }
                    for peer in 0..size {
                        if peer != rank {
                            let mut b = [0u8; 1];
                            mesh.link(peer).unwrap().read_exact(&mut b).unwrap();
                            assert_eq!(b[0] as usize, peer);
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn checksum_mismatch_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let d0 = dir.path().to_path_buf();
        let d1 = dir.path().to_path_buf();
        let h0 = std::thread::spawn(move || {
            Mesh::rendezvous(&d0, "c", 0, 2, [1; 32], Duration::from_secs(5)).map(|_| ())
        });
        let h1 = std::thread::spawn(move || {
            Mesh::rendezvous(&d1, "c", 1, 2, [2; 32], Duration::from_secs(5)).map(|_| ())
        });
        assert!(matches!(h0.join().unwrap(), Err(NetError::ConfigMismatch { peer: 1 })));
        assert!(matches!(h1.join().unwrap(), Err(NetError::ConfigMismatch { peer: 0 })));
    }
}
