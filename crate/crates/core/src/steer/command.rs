use std::time::SystemTime;

use crate::net::wire::{put_f64, put_u16, put_u64, put_u8, WireReader};
use crate::net::NetError;

pub const COMMAND_MAGIC: &[u8; 4] = b"STER";
pub const ACK_MAGIC: &[u8; 4] = b"SACK";
pub const WATERMARK_MAGIC: &[u8; 4] = b"SWMK";

/// Bytes of a STER message before the parameter name.
pub const COMMAND_FIXED_LEN: usize = 4 + 8 + 8 + 1 + 2;
pub const ACK_LEN: usize = 4 + 2 + 8;
pub const WATERMARK_LEN: usize = 4 + 8;
/// An ack with this seq announces that the rank finished and is closing
/// its connection on purpose.
pub const DEPARTURE_SEQ: u64 = u64::MAX;

/// Simulation parameters that may be steered at runtime.
pub const STEERABLE_PARAMS: &[&str] = &["dt", "target_temperature"];

#[derive(Debug, Clone, PartialEq)]
pub enum CommandKind {
    SetParam { name: String, value: f64 },
    Pause,
    Resume,
    Terminate,
}

impl CommandKind {
    pub fn set(name: &str, value: f64) -> Self {
        CommandKind::SetParam {
            name: name.to_string(),
            value,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CommandKind::SetParam { .. } => 0,
            CommandKind::Pause => 1,
            CommandKind::Resume => 2,
            CommandKind::Terminate => 3,
        }
    }

    /// Checks a command against the steerable parameter set before it is
    /// sequenced. Returns the rejection reason.
    pub fn validate(&self) -> Result<(), String> {
        let CommandKind::SetParam { name, value } = self else {
            return Ok(());
        };
        match name.as_str() {
            "dt" if *value > 0.0 && value.is_finite() => Ok(()),
            "dt" => Err(format!("dt must be positive and finite, got {value}")),
            "target_temperature" if *value >= 0.0 && value.is_finite() => Ok(()),
            "target_temperature" => Err(format!(
                "target_temperature must be non-negative and finite, got {value}"
            )),
            other => Err(format!(
                "unknown parameter {other:?}; steerable parameters are {STEERABLE_PARAMS:?}"
            )),
        }
    }
}

/// A sequenced steering command with its deterministic application step.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringCommand {
    pub seq: u64,
    pub kind: CommandKind,
    pub apply_at_step: u64,
    /// Wall-clock submission time at the head; not carried on the wire.
    pub issued_at: Option<SystemTime>,
}

impl SteeringCommand {
    /// Encodes the STER message:
    /// magic, seq u64, apply_at_step u64, kind u8, name_len u16, name, value f64.
    pub fn encode(&self) -> Vec<u8> {
        encode_command(self.seq, self.apply_at_step, &self.kind)
    }

    /// Decodes one STER message, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(SteeringCommand, usize), NetError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(COMMAND_MAGIC)?;
        let seq = r.u64()?;
        let apply_at_step = r.u64()?;
        let code = r.u8()?;
        let name_len = r.u16()? as usize;
        let name = r.take(name_len)?;
        let value = r.f64()?;
        let kind = match code {
            0 => CommandKind::SetParam {
                name: String::from_utf8(name.to_vec())
                    .map_err(|_| NetError::Protocol("parameter name is not utf-8".into()))?,
                value,
            },
            1 => CommandKind::Pause,
            2 => CommandKind::Resume,
            3 => CommandKind::Terminate,
            other => return Err(NetError::Protocol(format!("unknown command kind {other}"))),
        };
        Ok((
            SteeringCommand {
                seq,
                kind,
                apply_at_step,
                issued_at: None,
            },
            r.position(),
        ))
    }

    /// Total STER length implied by a buffer holding at least the fixed part.
    pub fn wire_len(fixed: &[u8]) -> Option<usize> {
        if fixed.len() < COMMAND_FIXED_LEN {
            return None;
        }
        let name_len = u16::from_le_bytes([fixed[21], fixed[22]]) as usize;
        Some(COMMAND_FIXED_LEN + name_len + 8)
    }
}

pub fn encode_command(seq: u64, apply_at_step: u64, kind: &CommandKind) -> Vec<u8> {
    let (name, value): (&[u8], f64) = match kind {
        CommandKind::SetParam { name, value } => (name.as_bytes(), *value),
        _ => (&[], 0.0),
    };
    let mut out = Vec::with_capacity(COMMAND_FIXED_LEN + name.len() + 8);
    out.extend_from_slice(COMMAND_MAGIC);
    put_u64(&mut out, seq);
    put_u64(&mut out, apply_at_step);
    put_u8(&mut out, kind.code());
    put_u16(&mut out, name.len() as u16);
    out.extend_from_slice(name);
    put_f64(&mut out, value);
    out
}

/// Rank acknowledgement of a received command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub rank: u16,
    pub seq: u64,
}

impl Ack {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ACK_LEN);
        out.extend_from_slice(ACK_MAGIC);
        put_u16(&mut out, self.rank);
        put_u64(&mut out, self.seq);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Ack, NetError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(ACK_MAGIC)?;
        Ok(Ack {
            rank: r.u16()?,
            seq: r.u64()?,
        })
    }
}

/// "Every command due at or before this step has been sent."
pub fn encode_watermark(step: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(WATERMARK_LEN);
    out.extend_from_slice(WATERMARK_MAGIC);
    put_u64(&mut out, step);
    out
}
