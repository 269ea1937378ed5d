use rayon::prelude::*;

use crate::net::wire::{put_f32, put_f64, put_u16, put_u32, WireReader};

use super::camera::{CameraPose, Warp, CAMERA_WIRE_LEN};
use super::image::DepthImage;
use super::RenderError;

pub const VDI_MAGIC: &[u8; 4] = b"VDIF";
pub const VDI_VERSION: u32 = 1;
pub const DEFAULT_S_MAX: usize = 8;
/// Bytes before the per-pixel counts.
pub const VDI_HEADER_LEN: usize = 4 + 4 + 2 + 2 + 2 + 8 * CAMERA_WIRE_LEN;

/// One depth interval of a VDI pixel with premultiplied colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Supersegment {
    pub front: f32,
    pub back: f32,
    pub rgba: [f32; 4],
}

/// `front` over `back` for premultiplied colours.
pub fn over(front: [f32; 4], back: [f32; 4]) -> [f32; 4] {
    let k = 1.0 - front[3];
    [
        front[0] + k * back[0],
        front[1] + k * back[1],
        front[2] + k * back[2],
        front[3] + k * back[3],
    ]
}

impl Supersegment {
    /// The span of both with `self` composited over `behind`.
    pub fn absorb(&self, behind: &Supersegment) -> Supersegment {
        Supersegment {
            front: self.front.min(behind.front),
            back: self.back.max(behind.back),
            rgba: over(self.rgba, behind.rgba),
        }
    }

    fn straight(&self) -> [f32; 3] {
        let a = self.rgba[3];
        if a > 0.0 {
            [self.rgba[0] / a, self.rgba[1] / a, self.rgba[2] / a]
        } else {
            [0.0; 3]
        }
    }

    /// Largest difference between un-premultiplied colour channels.
    pub fn color_distance(&self, other: &Supersegment) -> f32 {
        let (a, b) = (self.straight(), other.straight());
        (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f32::max)
    }
}

/// Merges front-sorted intervals into supersegments.
///
/// Overlapping neighbours always merge; with a tolerance, neighbours whose
/// colours differ by at most that much merge too. While more than `s_max`
/// remain, the adjacent pair with the smallest gap merges.
pub fn merge_sorted(
    sorted: impl IntoIterator<Item = Supersegment>,
    s_max: usize,
    tolerance: Option<f32>,
) -> Vec<Supersegment> {
    let mut out: Vec<Supersegment> = Vec::new();
    for s in sorted {
        if let Some(last) = out.last_mut() {
            let overlaps = s.front < last.back;
            let similar = tolerance.is_some_and(|t| last.color_distance(&s) <= t);
            if overlaps || similar {
                *last = last.absorb(&s);
                continue;
            }
        }
        out.push(s);
    }
    while out.len() > s_max.max(1) {
        let i = (0..out.len() - 1)
            .min_by(|&a, &b| {
                let ga = out[a + 1].front - out[a].back;
                let gb = out[b + 1].front - out[b].back;
                ga.total_cmp(&gb)
            })
            .unwrap_or(0);
        out[i] = out[i].absorb(&out[i + 1]);
        out.remove(i + 1);
    }
    out
}

/// Quantizes a [0, 1] channel to 8 bits.
pub fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Volumetric depth image: per-pixel depth-sorted supersegments as seen
/// from `camera`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vdi {
    pub width: usize,
    pub height: usize,
    pub camera: CameraPose,
    pub s_max: usize,
    starts: Vec<usize>,
    segments: Vec<Supersegment>,
}

impl Vdi {
    pub fn empty(width: usize, height: usize, camera: CameraPose, s_max: usize) -> Self {
        Self {
            width,
            height,
            camera,
            s_max,
            starts: vec![0; width * height + 1],
            segments: Vec::new(),
        }
    }

    /// Builds from one list per pixel in row-major order.
    pub fn from_lists<L: AsRef<[Supersegment]>>(
        width: usize,
        height: usize,
        camera: CameraPose,
        s_max: usize,
        lists: impl IntoIterator<Item = L>,
    ) -> Self {
        let mut starts = Vec::with_capacity(width * height + 1);
        let mut segments = Vec::new();
        starts.push(0);
        for l in lists {
            segments.extend_from_slice(l.as_ref());
            starts.push(segments.len());
        }
        assert_eq!(starts.len(), width * height + 1, "one list per pixel");
        Self {
            width,
            height,
            camera,
            s_max,
            starts,
            segments,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[Supersegment] {
        &self.segments[self.starts[i]..self.starts[i + 1]]
    }

    pub fn counts(&self) -> impl Iterator<Item = usize> + '_ {
        self.starts.windows(2).map(|w| w[1] - w[0])
    }

    pub fn segments(&self) -> &[Supersegment] {
        &self.segments
    }

    /// Depth order, non-overlap, alpha range and the `s_max` bound.
    pub fn check_invariants(&self) -> Result<(), String> {
        for i in 0..self.pixel_count() {
            let px = self.pixel(i);
            if px.len() > self.s_max {
                return Err(format!("pixel {i}: {} segments > S_max {}", px.len(), self.s_max));
            }
            for s in px {
                if !(0.0..=1.0).contains(&s.rgba[3]) || s.front > s.back {
                    return Err(format!("pixel {i}: bad segment {s:?}"));
                }
            }
            for w in px.windows(2) {
                if w[0].back > w[1].front {
                    return Err(format!("pixel {i}: overlapping segments {:?} {:?}", w[0], w[1]));
                }
            }
        }
        Ok(())
    }

    /// Little-endian file form: header, u16 count per pixel, then 6 × f32
    /// per supersegment (front, back, r, g, b, a).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(VDI_HEADER_LEN + 2 * self.pixel_count() + 24 * self.segments.len());
        out.extend_from_slice(VDI_MAGIC);
        put_u32(&mut out, VDI_VERSION);
        put_u16(&mut out, self.width as u16);
        put_u16(&mut out, self.height as u16);
        put_u16(&mut out, self.s_max as u16);
        for v in self.camera.to_wire(self.width as f64 / self.height as f64) {
            put_f64(&mut out, v);
        }
        for c in self.counts() {
            put_u16(&mut out, c as u16);
        }
        for s in &self.segments {
            for v in [s.front, s.back, s.rgba[0], s.rgba[1], s.rgba[2], s.rgba[3]] {
                put_f32(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Vdi, RenderError> {
        let fmt = |e: crate::net::NetError| RenderError::Format(e.to_string());
        let mut r = WireReader::new(bytes);
        r.expect_magic(VDI_MAGIC).map_err(fmt)?;
        let version = r.u32().map_err(fmt)?;
        if version != VDI_VERSION {
            return Err(RenderError::Format(format!("unsupported VDI version {version}")));
        }
        let width = r.u16().map_err(fmt)? as usize;
        let height = r.u16().map_err(fmt)? as usize;
        let s_max = r.u16().map_err(fmt)? as usize;
        let mut cam = [0.0; CAMERA_WIRE_LEN];
        for v in &mut cam {
            *v = r.f64().map_err(fmt)?;
        }
        let camera = CameraPose::from_wire(&cam)?;
        let mut starts = Vec::with_capacity(width * height + 1);
        starts.push(0usize);
        for _ in 0..width * height {
            let c = r.u16().map_err(fmt)? as usize;
            starts.push(starts.last().unwrap() + c);
        }
        let total = *starts.last().unwrap();
        if r.remaining() != total * 24 {
            return Err(RenderError::Format(format!(
                "{} segment bytes, expected {}",
                r.remaining(),
                total * 24
            )));
        }
        let mut segments = Vec::with_capacity(total);
        for _ in 0..total {
            let mut v = [0f32; 6];
            for x in &mut v {
                *x = r.f32().map_err(fmt)?;
            }
            segments.push(Supersegment {
                front: v[0],
                back: v[1],
                rgba: [v[2], v[3], v[4], v[5]],
            });
        }
        Ok(Vdi {
            width,
            height,
            camera,
            s_max,
            starts,
            segments,
        })
    }
}

fn composite_list(list: impl IntoIterator<Item = (f32, [f32; 4])>) -> ([u8; 4], f32) {
    let mut acc = [0f32; 4];
    let mut depth = f32::INFINITY;
    for (d, c) in list {
        if depth == f32::INFINITY {
            depth = d;
        }
        acc = over(acc, c);
        if acc[3] >= 1.0 {
            break;
        }
    }
    (acc.map(to_u8), depth)
}

/// Flattens a VDI into an image as seen from `cam`.
///
/// At the VDI's own camera each pixel composites its own list. Elsewhere
/// every supersegment's front point is projected into `cam` and splatted
/// with a one-pixel square footprint, which covers up to four destination
/// pixels by area. Per destination pixel, splats whose depth slabs overlap
/// form one layer with the coverage-weighted mean colour; layers covering
/// less than half the pixel are dropped and the rest are composited front
/// to back.
pub fn composite_vdi_to_image(vdi: &Vdi, cam: &CameraPose) -> DepthImage {
    let (w, h) = (vdi.width, vdi.height);
    let mut img = DepthImage::background(w, h);
    if *cam == vdi.camera {
        img.rgba
            .par_iter_mut()
            .zip(img.depth.par_iter_mut())
            .enumerate()
            .for_each(|(i, (rgba, depth))| {
                (*rgba, *depth) = composite_list(vdi.pixel(i).iter().map(|s| (s.front, s.rgba)));
            });
        return img;
    }

    let warp = Warp::new(vdi.camera.frame(w, h), cam.frame(w, h));
    // Splats are keyed by the top-left pixel of the 2x2 block their
    // footprint touches, on a grid padded by one row and column.
    let (gw, gh) = (w + 1, h + 1);
    let rows: Vec<Vec<Splat>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(vdi.starts[(y + 1) * w] - vdi.starts[y * w]);
            for x in 0..w {
                let list = vdi.pixel(y * w + x);
                if list.is_empty() {
                    continue;
                }
                let ray = warp.ray(x, y);
                for s in list {
                    let Some((fx, fy, d)) = warp.point(&ray, s.front as f64) else {
                        continue;
                    };
                    let (bx, by) = ((fx - 0.5).floor(), (fy - 0.5).floor());
                    if bx < -1.0 || by < -1.0 || bx >= w as f64 || by >= h as f64 {
                        continue;
                    }
                    let key = (by as i64 + 1) as usize * gw + (bx as i64 + 1) as usize;
                    row.push(Splat {
                        key: key as u32,
                        u: (fx - 0.5 - bx) as f32,
                        v: (fy - 0.5 - by) as f32,
                        front: d as f32,
                        back: d as f32 + (s.back - s.front),
                        rgba: s.rgba,
                    });
                }
            }
            row
        })
        .collect();
    let splats = rows.concat();

    // counting sort by block
    let mut starts = vec![0u32; gw * gh + 1];
    for s in &splats {
        starts[s.key as usize + 1] += 1;
    }
    for i in 0..gw * gh {
        starts[i + 1] += starts[i];
    }
    let mut fill = starts.clone();
    let mut order = vec![0u32; splats.len()];
    for (j, s) in splats.iter().enumerate() {
        order[fill[s.key as usize] as usize] = j as u32;
        fill[s.key as usize] += 1;
    }

    img.rgba
        .par_chunks_mut(w)
        .zip(img.depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rgba, depth))| {
            let mut near: Vec<(f32, f32, f32, u32)> = Vec::new();
            let mut layers: Vec<(f32, [f32; 4])> = Vec::new();
            for x in 0..w {
                near.clear();
                // blocks whose 2x2 footprint includes (x, y), in padded coordinates
                for (gy, right_row) in [(y, true), (y + 1, false)] {
                    for (gx, right_col) in [(x, true), (x + 1, false)] {
                        let b = gy * gw + gx;
                        for &j in &order[starts[b] as usize..starts[b + 1] as usize] {
                            let s = &splats[j as usize];
                            let wx = if right_col { s.u } else { 1.0 - s.u };
                            let wy = if right_row { s.v } else { 1.0 - s.v };
                            let wt = wx * wy;
                            if wt > 0.0 {
                                near.push((s.front, s.back, wt, j));
                            }
                        }
                    }
                }
                if near.is_empty() {
                    continue;
                }
                if near.len() > 1 {
                    near.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                }
                layers.clear();
                let mut k = 0;
                while k < near.len() {
                    let (front, mut back) = (near[k].0, near[k].1);
                    let mut sum = [0f32; 4];
                    let mut cover = 0f32;
                    while k < near.len() && near[k].0 <= back {
                        let (_, b, wt, j) = near[k];
                        let c = splats[j as usize].rgba;
                        back = back.max(b);
                        cover += wt;
                        for ch in 0..4 {
                            sum[ch] += wt * c[ch];
                        }
                        k += 1;
                    }
                    if cover >= 0.5 {
                        layers.push((front, sum.map(|c| c / cover)));
                    }
                }
                if !layers.is_empty() {
                    (rgba[x], depth[x]) = composite_list(layers.iter().copied());
                }
            }
        });
    img
}

#[derive(Clone, Copy)]
struct Splat {
    key: u32,
    u: f32,
    v: f32,
    front: f32,
    back: f32,
    rgba: [f32; 4],
}
