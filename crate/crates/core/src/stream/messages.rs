use crate::net::wire::{put_f64, put_u16, put_u64, put_u8, WireReader};
use crate::net::NetError;
use crate::steer::{CommandKind, RankState, SteeringCommand, VizParam, COMMAND_MAGIC, VIZ_MAGIC};

use super::frame::FRAME_MAGIC;
use super::StreamError;

pub const STATS_MAGIC: &[u8; 4] = b"STAT";
pub const RESPONSE_MAGIC: &[u8; 4] = b"SRSP";
pub const ECHO_MAGIC: &[u8; 4] = b"ECHO";
pub const ECHO_LEN: usize = 4 + 8 + 8;

/// Once-a-second liveness report for clients.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsMessage {
    pub frames_per_second: f64,
    pub sim_steps_per_second: f64,
    /// NaN when no echo arrived recently.
    pub last_steer_roundtrip_ms: f64,
    pub rank_states: Vec<RankState>,
}

impl StatsMessage {
    /// STAT message: magic, three f64, rank count u16, one u8 per rank
    /// (0 ok, 1 lost).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = STATS_MAGIC.to_vec();
        put_f64(&mut out, self.frames_per_second);
        put_f64(&mut out, self.sim_steps_per_second);
        put_f64(&mut out, self.last_steer_roundtrip_ms);
        put_u16(&mut out, self.rank_states.len() as u16);
        for s in &self.rank_states {
            put_u8(&mut out, matches!(s, RankState::Lost) as u8);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<(StatsMessage, usize), StreamError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(STATS_MAGIC)?;
        let frames_per_second = r.f64()?;
        let sim_steps_per_second = r.f64()?;
        let last_steer_roundtrip_ms = r.f64()?;
        let n = r.u16()? as usize;
        let mut rank_states = Vec::with_capacity(n);
        for _ in 0..n {
            rank_states.push(match r.u8()? {
                0 => RankState::Alive,
                1 => RankState::Lost,
                s => return Err(StreamError::Protocol(format!("unknown rank state {s}"))),
            });
        }
        let msg = StatsMessage {
            frames_per_second,
            sim_steps_per_second,
            last_steer_roundtrip_ms,
            rank_states,
        };
        Ok((msg, r.position()))
    }
}

/// The head's answer to a client's steering request.
#[derive(Debug, Clone, PartialEq)]
pub enum SteerResponse {
    Accepted { request_id: u64, seq: u64, apply_at_step: u64 },
    Rejected { request_id: u64, reason: String },
}

impl SteerResponse {
    /// SRSP message: magic, request_id u64, status u8 (0 accepted,
    /// 1 rejected), seq u64, apply_at_step u64, reason_len u16, reason.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = RESPONSE_MAGIC.to_vec();
        let (id, status, seq, step, reason) = match self {
            SteerResponse::Accepted {
                request_id,
                seq,
                apply_at_step,
            } => (*request_id, 0, *seq, *apply_at_step, ""),
            SteerResponse::Rejected { request_id, reason } => (*request_id, 1, 0, 0, reason.as_str()),
        };
        put_u64(&mut out, id);
        put_u8(&mut out, status);
        put_u64(&mut out, seq);
        put_u64(&mut out, step);
        put_u16(&mut out, reason.len() as u16);
        out.extend_from_slice(reason.as_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<(SteerResponse, usize), StreamError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(RESPONSE_MAGIC)?;
        let request_id = r.u64()?;
        let status = r.u8()?;
        let seq = r.u64()?;
        let apply_at_step = r.u64()?;
        let len = r.u16()? as usize;
        let reason = String::from_utf8_lossy(r.take(len)?).into_owned();
        let msg = match status {
            0 => SteerResponse::Accepted {
                request_id,
                seq,
                apply_at_step,
            },
            1 => SteerResponse::Rejected { request_id, reason },
            s => return Err(StreamError::Protocol(format!("unknown response status {s}"))),
        };
        Ok((msg, r.position()))
    }
}

/// Client echo of a frame's capture timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Echo {
    pub frame_seq: u64,
    pub capture_us: u64,
}

impl Echo {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = ECHO_MAGIC.to_vec();
        put_u64(&mut out, self.frame_seq);
        put_u64(&mut out, self.capture_us);
        out
    }
}

/// A message from a client. Steering requests reuse the STER layout with
/// the seq field carrying a client-chosen request id; the head assigns the
/// real seq and apply step.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Steer { request_id: u64, kind: CommandKind },
    Viz(VizParam),
    Echo(Echo),
}

impl ClientMessage {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            ClientMessage::Steer { request_id, kind } => crate::steer::encode_command(*request_id, 0, kind),
            ClientMessage::Viz(p) => p.encode(),
            ClientMessage::Echo(e) => e.encode(),
        }
    }
}

/// Splits a byte stream into client messages.
#[derive(Debug, Default)]
pub struct ClientParser {
    buf: Vec<u8>,
}

impl ClientParser {
    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<ClientMessage>, StreamError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let magic: [u8; 4] = self.buf[..4].try_into().expect("four bytes");
        let need = match &magic {
            m if m == COMMAND_MAGIC => SteeringCommand::wire_len(&self.buf),
            m if m == VIZ_MAGIC => VizParam::wire_len(&self.buf),
            m if m == ECHO_MAGIC => Some(ECHO_LEN),
            m if m == FRAME_MAGIC || m == STATS_MAGIC || m == RESPONSE_MAGIC => {
                return Err(StreamError::Protocol(format!(
                    "server message {:?} sent by client",
                    String::from_utf8_lossy(m)
                )))
            }
            m => {
                return Err(StreamError::Net(NetError::BadMagic {
                    expected: *COMMAND_MAGIC,
                    got: *m,
                }))
            }
        };
        let Some(need) = need else {
            return Ok(None);
        };
        if self.buf.len() < need {
            return Ok(None);
        }
        let msg = match &magic {
            m if m == COMMAND_MAGIC => {
                let (cmd, _) = SteeringCommand::decode(&self.buf[..need])?;
                ClientMessage::Steer {
                    request_id: cmd.seq,
                    kind: cmd.kind,
                }
            }
            m if m == VIZ_MAGIC => ClientMessage::Viz(VizParam::decode(&self.buf[..need])?.0),
            _ => {
                let mut r = WireReader::new(&self.buf[4..need]);
                ClientMessage::Echo(Echo {
                    frame_seq: r.u64()?,
                    capture_us: r.u64()?,
                })
            }
        };
        self.buf.drain(..need);
        Ok(Some(msg))
    }
}

/// A message from the server.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Frame(super::FrameMessage),
    Stats(StatsMessage),
    Response(SteerResponse),
}

impl ServerMessage {
    /// Decodes one message from the front of `buf`; `Ok(None)` if `buf`
    /// holds only part of one.
    pub fn decode(buf: &[u8]) -> Result<Option<(ServerMessage, usize)>, StreamError> {
        if buf.len() < 4 {
            return Ok(None);
        }
        let res = match &buf[..4] {
            m if m == FRAME_MAGIC => super::FrameMessage::decode(buf).map(|(f, n)| (ServerMessage::Frame(f), n)),
            m if m == STATS_MAGIC => StatsMessage::decode(buf).map(|(s, n)| (ServerMessage::Stats(s), n)),
            m if m == RESPONSE_MAGIC => SteerResponse::decode(buf).map(|(s, n)| (ServerMessage::Response(s), n)),
            m => {
                return Err(StreamError::Net(NetError::BadMagic {
                    expected: *FRAME_MAGIC,
                    got: m.try_into().expect("four bytes"),
                }))
            }
        };
        match res {
            Ok(v) => Ok(Some(v)),
            Err(StreamError::Net(NetError::Truncated { .. })) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
