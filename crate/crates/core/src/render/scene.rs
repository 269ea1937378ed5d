use nalgebra::Vector3;
use rayon::prelude::*;

use crate::snapshot::ParticleSource;

use super::camera::{CameraFrame, CameraPose};
use super::colormap::ColorMap;
use super::grid::Grid;
use super::image::DepthImage;
use super::vdi::{merge_sorted, Supersegment, Vdi};
use super::{RenderError, DEFAULT_CELL_HINT, DEFAULT_MERGE_TOLERANCE};

/// Fraction of the base colour lit regardless of orientation.
pub const AMBIENT: f64 = 0.2;

/// Remaining transmittance below which nothing further back changes an
/// 8-bit channel.
const SATURATION_EPS: f32 = 1.0 / 1024.0;

/// Entry and exit ray parameters of a ray/sphere intersection; `dir` must
/// be unit length.
pub fn ray_sphere(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    center: &Vector3<f64>,
    radius: f64,
) -> Option<(f64, f64)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

/// Lambert shading against a headlight at the eye.
pub fn shade(base: [u8; 3], dir: &Vector3<f64>, normal: &Vector3<f64>) -> [u8; 3] {
    let lambert = (-normal.dot(dir)).max(0.0);
    let f = AMBIENT + (1.0 - AMBIENT) * lambert;
    base.map(|c| (c as f64 * f).round().clamp(0.0, 255.0) as u8)
}

/// Spheres of one snapshot with their acceleration grid.
pub struct SphereScene {
    centers: Vec<Vector3<f64>>,
    speeds: Vec<f64>,
    radius: f64,
    grid: Grid,
}

impl SphereScene {
    pub fn new<S: ParticleSource + ?Sized>(
        source: &S,
        radius: f64,
        cell_hint: f64,
    ) -> Result<SphereScene, RenderError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(RenderError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        let n = source.len();
        let mut centers = Vec::with_capacity(n);
        let mut speeds = Vec::with_capacity(n);
        for i in 0..n {
            let r = source.record(i);
            centers.push(Vector3::from(r.position.map(f64::from)));
            let v = r.velocity.map(f64::from);
            speeds.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
        }
        let grid = Grid::build(&centers, radius, cell_hint);
        Ok(SphereScene {
            centers,
            speeds,
            radius,
            grid,
        })
    }

    /// The same spheres at another radius.
    pub fn with_radius(&self, radius: f64) -> Result<SphereScene, RenderError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(RenderError::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        Ok(SphereScene {
            centers: self.centers.clone(),
            speeds: self.speeds.clone(),
            radius,
            grid: Grid::build(&self.centers, radius, DEFAULT_CELL_HINT),
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self, i: usize) -> Vector3<f64> {
        self.centers[i]
    }

    pub fn speed(&self, i: usize) -> f64 {
        self.speeds[i]
    }

    /// Nearest sphere entered within `[near, far]`, ties to the lower index.
    pub fn nearest_hit(&self, frame: &CameraFrame, dir: &Vector3<f64>) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        let eps = self.grid.eps;
        self.grid
            .traverse(&frame.origin, dir, frame.near, frame.far, |items, t_exit| {
                for &i in items {
                    if let Some((t, _)) = ray_sphere(&frame.origin, dir, &self.centers[i as usize], self.radius) {
                        if t >= frame.near && t <= frame.far && best.is_none_or(|b| (t, i) < b) {
                            best = Some((t, i));
                        }
                    }
                }
                best.is_none_or(|(t, _)| t + eps >= t_exit)
            });
        best
    }

    fn hit_color(&self, frame: &CameraFrame, dir: &Vector3<f64>, t: f64, i: u32, cmap: &ColorMap) -> [u8; 3] {
        let c = self.centers[i as usize];
        let normal = (frame.origin + dir * t - c) / self.radius;
        shade(cmap.color(self.speeds[i as usize]), dir, &normal)
    }

    /// Opaque spheres: nearest hit per pixel, coloured by speed.
    pub fn render(
        &self,
        cam: &CameraPose,
        width: usize,
        height: usize,
        cmap: &ColorMap,
    ) -> Result<DepthImage, RenderError> {
        check_size(width, height)?;
        let frame = cam.frame(width, height);
        let mut img = DepthImage::background(width, height);
        img.rgba
            .par_chunks_mut(width)
            .zip(img.depth.par_chunks_mut(width))
            .enumerate()
            .for_each(|(y, (rgba, depth))| {
                for x in 0..width {
                    let dir = frame.ray_dir(x, y);
                    if let Some((t, i)) = self.nearest_hit(&frame, &dir) {
                        let [r, g, b] = self.hit_color(&frame, &dir, t, i, cmap);
                        rgba[x] = [r, g, b, 255];
                        depth[x] = t as f32;
                    }
                }
            });
        Ok(img)
    }

    /// Index of the nearest sphere per pixel.
    pub fn render_ids(
        &self,
        cam: &CameraPose,
        width: usize,
        height: usize,
    ) -> Result<Vec<Option<u32>>, RenderError> {
        check_size(width, height)?;
        let frame = cam.frame(width, height);
        let mut ids = vec![None; width * height];
        ids.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                *out = self.nearest_hit(&frame, &frame.ray_dir(x, y)).map(|(_, i)| i);
            }
        });
        Ok(ids)
    }

    /// Every sphere interval along the ray within `[near, far]`, sorted by
    /// entry then index.
    pub fn all_hits(&self, frame: &CameraFrame, dir: &Vector3<f64>, out: &mut Vec<(f64, f64, u32)>) {
        out.clear();
        self.grid
            .traverse(&frame.origin, dir, frame.near, frame.far, |items, _| {
                for &i in items {
                    if let Some((t0, t1)) = ray_sphere(&frame.origin, dir, &self.centers[i as usize], self.radius) {
                        if t0 >= frame.near && t0 <= frame.far {
                            out.push((t0, t1, i));
                        }
                    }
                }
                true
            });
        out.sort_unstable_by_key(|h| h.2);
        out.dedup_by_key(|h| h.2);
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    }

    /// Volumetric depth image: per pixel, sphere intervals with colour
    /// `opacity`-weighted, merged into at most `s_max` supersegments.
    /// Supersegments behind the point where the ray becomes opaque are
    /// dropped.
    #[allow(clippy::too_many_arguments)]
    pub fn build_vdi(
        &self,
        cam: &CameraPose,
        width: usize,
        height: usize,
        cmap: &ColorMap,
        opacity: f64,
        s_max: usize,
    ) -> Result<Vdi, RenderError> {
        check_size(width, height)?;
        if !(opacity > 0.0 && opacity <= 1.0) {
            return Err(RenderError::InvalidArgument(format!("opacity must be in (0, 1], got {opacity}")));
        }
        if s_max < 1 || s_max > u16::MAX as usize {
            return Err(RenderError::InvalidArgument(format!("S_max must be in 1..=65535, got {s_max}")));
        }
        let frame = cam.frame(width, height);
        let alpha = opacity as f32;
        let rows: Vec<Vec<Vec<Supersegment>>> = (0..height)
            .into_par_iter()
            .map(|y| {
                let mut hits = Vec::new();
                (0..width)
                    .map(|x| {
                        let dir = frame.ray_dir(x, y);
                        self.all_hits(&frame, &dir, &mut hits);
                        let raw = hits.iter().map(|&(t0, t1, i)| {
                            let rgb = self.hit_color(&frame, &dir, t0, i, cmap);
                            let c = rgb.map(|v| v as f32 / 255.0 * alpha);
                            Supersegment {
                                front: t0 as f32,
                                back: t1 as f32,
                                rgba: [c[0], c[1], c[2], alpha],
                            }
                        });
                        let mut list = merge_sorted(raw, s_max, Some(DEFAULT_MERGE_TOLERANCE));
                        truncate_hidden(&mut list);
                        list
                    })
                    .collect()
            })
            .collect();
        Ok(Vdi::from_lists(width, height, *cam, s_max, rows.into_iter().flatten()))
    }
}

fn truncate_hidden(list: &mut Vec<Supersegment>) {
    let mut transmit = 1.0f32;
    for (k, s) in list.iter().enumerate() {
        transmit *= 1.0 - s.rgba[3];
        if transmit <= SATURATION_EPS {
            list.truncate(k + 1);
            return;
        }
    }
}

fn check_size(width: usize, height: usize) -> Result<(), RenderError> {
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(RenderError::InvalidArgument(format!("image size {width}x{height}")));
    }
    Ok(())
}

/// Renders `snap` as opaque spheres.
pub fn render_spheres<S: ParticleSource + ?Sized>(
    snap: &S,
    cam: &CameraPose,
    size: (usize, usize),
    radius: f64,
    cmap: &ColorMap,
) -> Result<DepthImage, RenderError> {
    check_size(size.0, size.1)?;
    SphereScene::new(snap, radius, DEFAULT_CELL_HINT)?.render(cam, size.0, size.1, cmap)
}

/// Builds a volumetric depth image of `snap`.
pub fn build_vdi<S: ParticleSource + ?Sized>(
    snap: &S,
    cam: &CameraPose,
    size: (usize, usize),
    radius: f64,
    cmap: &ColorMap,
    opacity: f64,
    s_max: usize,
) -> Result<Vdi, RenderError> {
    SphereScene::new(snap, radius, DEFAULT_CELL_HINT)?.build_vdi(cam, size.0, size.1, cmap, opacity, s_max)
}
