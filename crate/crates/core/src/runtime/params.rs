use crate::net::wire::{put_f64, put_u64, put_u8, WireReader};
use crate::net::NetError;
use crate::render::{CameraPose, RenderMode, CAMERA_WIRE_LEN};
use crate::steer::VizParam;

use super::RuntimeError;

pub const FRAME_PARAMS_MAGIC: &[u8; 4] = b"VFRM";
pub const FRAME_PARAMS_LEN: usize = 4 + 8 + 1 + 1 + 8 * CAMERA_WIRE_LEN + 3 * 8;

const FLAG_STOP: u8 = 1;
const FLAG_PROBE: u8 = 2;

/// Visualization state owned by the head and changed by viz messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VizState {
    pub camera: CameraPose,
    pub radius: f64,
    pub vmin: f64,
    pub vmax: f64,
    pub mode: RenderMode,
}

impl VizState {
    pub fn apply(&mut self, p: &VizParam) {
        match *p {
            VizParam::SetCamera(c) => self.camera = c,
            VizParam::SetColorRange { vmin, vmax } => {
                self.vmin = vmin;
                self.vmax = vmax;
            }
            VizParam::SetRadius(r) => self.radius = r,
            VizParam::SetMode(m) => self.mode = m,
        }
    }
}

/// What every renderer draws for one frame, sent by the head before each
/// frame so all ranks composite the same view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    pub frame_seq: u64,
    /// No frame; renderers exit.
    pub stop: bool,
    /// Extra VDI frame used to time reprojection at the end of a benchmark.
    pub probe: bool,
    pub viz: VizState,
}

impl FrameParams {
    /// VFRM message: magic, frame_seq u64, flags u8 (1 stop, 2 probe),
    /// mode u8, camera 11 × f64, radius, vmin, vmax as f64.
    pub fn encode(&self, aspect: f64) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_PARAMS_LEN);
        out.extend_from_slice(FRAME_PARAMS_MAGIC);
        put_u64(&mut out, self.frame_seq);
        put_u8(&mut out, if self.stop { FLAG_STOP } else { 0 } | if self.probe { FLAG_PROBE } else { 0 });
        put_u8(&mut out, (self.viz.mode == RenderMode::Vdi) as u8);
        for v in self.viz.camera.to_wire(aspect) {
            put_f64(&mut out, v);
        }
        put_f64(&mut out, self.viz.radius);
        put_f64(&mut out, self.viz.vmin);
        put_f64(&mut out, self.viz.vmax);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<FrameParams, RuntimeError> {
        let mut r = WireReader::new(buf);
        r.expect_magic(FRAME_PARAMS_MAGIC)?;
        let frame_seq = r.u64()?;
        let flags = r.u8()?;
        let mode = match r.u8()? {
            0 => RenderMode::Opaque,
            1 => RenderMode::Vdi,
            m => return Err(NetError::Protocol(format!("unknown render mode {m}")).into()),
        };
        let mut cam = [0f64; CAMERA_WIRE_LEN];
        for v in &mut cam {
            *v = r.f64()?;
        }
        let viz = VizState {
            camera: CameraPose::from_wire(&cam)?,
            radius: r.f64()?,
            vmin: r.f64()?,
            vmax: r.f64()?,
            mode,
        };
        Ok(FrameParams {
            frame_seq,
            stop: flags & FLAG_STOP != 0,
            probe: flags & FLAG_PROBE != 0,
            viz,
        })
    }
}
