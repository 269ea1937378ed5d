use crate::net::wire::{put_f64, put_u8, WireReader};
use crate::net::NetError;
use crate::render::{CameraPose, RenderMode, CAMERA_WIRE_LEN};

pub const VIZ_MAGIC: &[u8; 4] = b"VIZP";

/// A visualization parameter change. These go to the renderers only and
/// never touch simulation state.
#[derive(Debug, Clone, PartialEq)]
pub enum VizParam {
    /// Camera with the aspect ratio it was chosen for.
    SetCamera(CameraPose),
    SetColorRange { vmin: f64, vmax: f64 },
    SetRadius(f64),
    SetMode(RenderMode),
}

impl VizParam {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            VizParam::SetCamera(c) => c.validate().map_err(|e| e.to_string()),
            VizParam::SetColorRange { vmin, vmax } if vmin.is_finite() && vmax.is_finite() && vmin < vmax => {
                Ok(())
            }
            VizParam::SetColorRange { vmin, vmax } => Err(format!("colour range needs vmin < vmax, got {vmin}..{vmax}")),
            VizParam::SetRadius(r) if *r > 0.0 && r.is_finite() => Ok(()),
            VizParam::SetRadius(r) => Err(format!("radius must be positive, got {r}")),
            VizParam::SetMode(_) => Ok(()),
        }
    }

    /// VIZP message: magic, kind u8, then kind-specific values:
    /// camera 11 × f64, colour range 2 × f64, radius f64, mode u8
    /// (0 opaque, 1 vdi).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = VIZ_MAGIC.to_vec();
        match self {
            VizParam::SetCamera(c) => {
                put_u8(&mut out, 0);
                // aspect is informational; renderers use their frame size
                for v in c.to_wire(1.0) {
                    put_f64(&mut out, v);
                }
            }
            VizParam::SetColorRange { vmin, vmax } => {
                put_u8(&mut out, 1);
                put_f64(&mut out, *vmin);
                put_f64(&mut out, *vmax);
            }
            VizParam::SetRadius(r) => {
                put_u8(&mut out, 2);
                put_f64(&mut out, *r);
            }
            VizParam::SetMode(m) => {
                put_u8(&mut out, 3);
                put_u8(&mut out, matches!(m, RenderMode::Vdi) as u8);
            }
        }
        out
    }

    /// Total message length given at least the magic and kind byte.
    pub fn wire_len(prefix: &[u8]) -> Option<usize> {
        let body = match *prefix.get(4)? {
            0 => 8 * CAMERA_WIRE_LEN,
            1 => 16,
            2 => 8,
            3 => 1,
            _ => 0,
        };
        Some(5 + body)
    }

    pub fn decode(buf: &[u8]) -> Result<(VizParam, usize), NetError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(VIZ_MAGIC)?;
        let p = match r.u8()? {
            0 => {
                let mut v = [0.0; CAMERA_WIRE_LEN];
                for x in &mut v {
                    *x = r.f64()?;
                }
                VizParam::SetCamera(CameraPose::from_wire(&v).map_err(|e| NetError::Protocol(e.to_string()))?)
            }
            1 => VizParam::SetColorRange {
                vmin: r.f64()?,
                vmax: r.f64()?,
            },
            2 => VizParam::SetRadius(r.f64()?),
            3 => VizParam::SetMode(match r.u8()? {
                0 => RenderMode::Opaque,
                1 => RenderMode::Vdi,
                m => return Err(NetError::Protocol(format!("unknown render mode {m}"))),
            }),
            k => return Err(NetError::Protocol(format!("unknown viz parameter kind {k}"))),
        };
        Ok((p, r.position()))
    }
}
