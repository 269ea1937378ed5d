use std::ops::Range;

use crate::net::wire::{put_f32, put_u16, WireReader};
use crate::net::NetError;
use crate::render::{merge_sorted, CameraPose, DepthImage, Supersegment, Vdi};

use super::CompositeError;

/// Bytes per DepthImage pixel on the wire: RGBA plus an f32 depth.
pub const DEPTH_PIXEL_SIZE: usize = 8;

/// Per pixel the nearer sample; ties go to `a`.
pub fn composite_depth_pair(a: &DepthImage, b: &DepthImage) -> Result<DepthImage, CompositeError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CompositeError::InvalidArgument(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut out = a.clone();
    for i in 0..out.pixel_count() {
        if b.depth[i] < a.depth[i] {
            out.rgba[i] = b.rgba[i];
            out.depth[i] = b.depth[i];
        }
    }
    Ok(out)
}

fn merge_lists(a: &[Supersegment], b: &[Supersegment], s_max: usize) -> Vec<Supersegment> {
    let mut merged = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].front <= b[j].front) {
            merged.push(a[i]);
            i += 1;
        } else {
            merged.push(b[j]);
            j += 1;
        }
    }
    merge_sorted(merged, s_max, None)
}

/// Per pixel, merge-sorts both lists by front depth, composites overlaps
/// and re-caps at `S_max`.
pub fn merge_vdi_pair(a: &Vdi, b: &Vdi) -> Result<Vdi, CompositeError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CompositeError::InvalidArgument("VDI sizes differ".into()));
    }
    if a.camera != b.camera {
        return Err(CompositeError::InvalidArgument("VDIs were built for different cameras".into()));
    }
    let s_max = a.s_max.max(b.s_max);
    let lists = (0..a.pixel_count()).map(|i| merge_lists(a.pixel(i), b.pixel(i), s_max));
    Ok(Vdi::from_lists(a.width, a.height, a.camera, s_max, lists))
}

/// A full-frame rendering that binary swap can split, exchange and merge by
/// linear pixel range.
pub trait Composite {
    fn pixel_count(&self) -> usize;

    fn encode_range(&self, range: Range<usize>) -> Vec<u8>;

    /// Composites `payload` (pixels of `range` from another rank) into self.
    /// `self_in_front` decides ties and ordering: the lower rank block is in
    /// front.
    fn merge_range(&mut self, range: Range<usize>, payload: &[u8], self_in_front: bool)
        -> Result<(), CompositeError>;

    /// Overwrites `range` with already composited pixels.
    fn replace_range(&mut self, range: Range<usize>, payload: &[u8]) -> Result<(), CompositeError>;
}

fn length_error(range: &Range<usize>, got: usize, want: usize) -> CompositeError {
    CompositeError::Protocol(format!(
        "payload for pixels {range:?} is {got} bytes, expected {want}"
    ))
}

fn decode_depth_pixels(payload: &[u8], range: &Range<usize>) -> Result<Vec<([u8; 4], f32)>, CompositeError> {
    let want = range.len() * DEPTH_PIXEL_SIZE;
    if payload.len() != want {
        return Err(length_error(range, payload.len(), want));
    }
    Ok(payload
        .chunks_exact(DEPTH_PIXEL_SIZE)
        .map(|c| {
            (
                [c[0], c[1], c[2], c[3]],
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect())
}

impl Composite for DepthImage {
    fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn encode_range(&self, range: Range<usize>) -> Vec<u8> {
        let mut out = Vec::with_capacity(range.len() * DEPTH_PIXEL_SIZE);
        for i in range {
            out.extend_from_slice(&self.rgba[i]);
            put_f32(&mut out, self.depth[i]);
        }
        out
    }

    fn merge_range(
        &mut self,
        range: Range<usize>,
        payload: &[u8],
        self_in_front: bool,
    ) -> Result<(), CompositeError> {
        let px = decode_depth_pixels(payload, &range)?;
        for (i, (rgba, depth)) in range.zip(px) {
            let take = if self_in_front {
                depth < self.depth[i]
            } else {
                depth <= self.depth[i]
            };
            if take {
                self.rgba[i] = rgba;
                self.depth[i] = depth;
            }
        }
        Ok(())
    }

    fn replace_range(&mut self, range: Range<usize>, payload: &[u8]) -> Result<(), CompositeError> {
        let px = decode_depth_pixels(payload, &range)?;
        for (i, (rgba, depth)) in range.zip(px) {
            self.rgba[i] = rgba;
            self.depth[i] = depth;
        }
        Ok(())
    }
}

/// A VDI in a mutable per-pixel form for compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct VdiLists {
    pub width: usize,
    pub height: usize,
    pub camera: CameraPose,
    pub s_max: usize,
    pub lists: Vec<Vec<Supersegment>>,
}

impl From<&Vdi> for VdiLists {
    fn from(v: &Vdi) -> Self {
        Self {
            width: v.width,
            height: v.height,
            camera: v.camera,
            s_max: v.s_max,
            lists: (0..v.pixel_count()).map(|i| v.pixel(i).to_vec()).collect(),
        }
    }
}

impl From<VdiLists> for Vdi {
    fn from(l: VdiLists) -> Self {
        Vdi::from_lists(l.width, l.height, l.camera, l.s_max, l.lists)
    }
}

fn decode_vdi_range(payload: &[u8], range: &Range<usize>) -> Result<Vec<Vec<Supersegment>>, CompositeError> {
    let proto = |e: NetError| CompositeError::Protocol(format!("VDI fragment for {range:?}: {e}"));
    let mut r = WireReader::new(payload);
    let mut counts = Vec::with_capacity(range.len());
    for _ in range.clone() {
        counts.push(r.u16().map_err(proto)? as usize);
    }
    let mut out = Vec::with_capacity(range.len());
    for c in counts {
        let mut list = Vec::with_capacity(c);
        for _ in 0..c {
            let mut v = [0f32; 6];
            for x in &mut v {
                *x = r.f32().map_err(proto)?;
            }
            list.push(Supersegment {
                front: v[0],
                back: v[1],
                rgba: [v[2], v[3], v[4], v[5]],
            });
        }
        out.push(list);
    }
    if r.remaining() != 0 {
        return Err(CompositeError::Protocol(format!(
            "{} trailing bytes in VDI fragment",
            r.remaining()
        )));
    }
    Ok(out)
}

impl Composite for VdiLists {
    fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Per-pixel u16 counts, then 6 × f32 per supersegment.
    fn encode_range(&self, range: Range<usize>) -> Vec<u8> {
        let mut out = Vec::new();
        for l in &self.lists[range.clone()] {
            put_u16(&mut out, l.len() as u16);
        }
        for l in &self.lists[range] {
            for s in l {
                for v in [s.front, s.back, s.rgba[0], s.rgba[1], s.rgba[2], s.rgba[3]] {
                    put_f32(&mut out, v);
                }
            }
        }
        out
    }

    fn merge_range(
        &mut self,
        range: Range<usize>,
        payload: &[u8],
        self_in_front: bool,
    ) -> Result<(), CompositeError> {
        let incoming = decode_vdi_range(payload, &range)?;
        for (i, other) in range.zip(incoming) {
            let mine = std::mem::take(&mut self.lists[i]);
            self.lists[i] = if self_in_front {
                merge_lists(&mine, &other, self.s_max)
            } else {
                merge_lists(&other, &mine, self.s_max)
            };
        }
        Ok(())
    }

    fn replace_range(&mut self, range: Range<usize>, payload: &[u8]) -> Result<(), CompositeError> {
        let incoming = decode_vdi_range(payload, &range)?;
        for (i, l) in range.zip(incoming) {
            self.lists[i] = l;
        }
        Ok(())
    }
}
