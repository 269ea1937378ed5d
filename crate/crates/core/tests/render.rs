use insitu_core::render::{
    build_vdi, composite_vdi_to_image, over, ray_sphere, render_spheres, shade, to_u8, CameraPose,
    ColorMap, DepthImage, RenderError, SphereScene, Supersegment, Vdi,
};
use insitu_core::snapshot::{ParticleRecord, ParticleSnapshot};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn snap(points: &[([f32; 3], [f32; 3])]) -> ParticleSnapshot {
    ParticleSnapshot {
        sim_step: 0,
        sim_time: 0.0,
        records: points
            .iter()
            .map(|&(position, velocity)| ParticleRecord { position, velocity })
            .collect(),
    }
}

fn random_snap(rng: &mut ChaCha8Rng, n: usize, box_len: f32) -> ParticleSnapshot {
    let pts: Vec<_> = (0..n)
        .map(|_| {
            (
                [0; 3].map(|_| rng.gen_range(0.0..box_len)),
                [0; 3].map(|_| rng.gen_range(-2.0..2.0)),
            )
        })
        .collect();
    snap(&pts)
}

fn axial_camera(z: f64) -> CameraPose {
    CameraPose::look_at(
        Point3::new(0.0, 0.0, z),
        Point3::origin(),
        Vector3::y(),
        40.0,
        0.1,
        1000.0,
    )
    .unwrap()
}

fn box_camera(box_len: f64, dist: f64) -> CameraPose {
    let c = box_len / 2.0;
    CameraPose::look_at(
        Point3::new(c + 0.3 * dist, c + 0.4 * dist, c + dist),
        Point3::new(c, c, c),
        Vector3::y(),
        45.0,
        0.1,
        1000.0,
    )
    .unwrap()
}

/// All spheres tested for every pixel; the oracle for the grid traversal.
fn brute_force(s: &ParticleSnapshot, cam: &CameraPose, w: usize, h: usize, radius: f64, cmap: &ColorMap) -> DepthImage {
    let frame = cam.frame(w, h);
    let mut img = DepthImage::background(w, h);
    for y in 0..h {
        for x in 0..w {
            let dir = frame.ray_dir(x, y);
            let mut best: Option<(f64, usize)> = None;
            for (i, r) in s.records.iter().enumerate() {
                let c = Vector3::from(r.position.map(f64::from));
                if let Some((t, _)) = ray_sphere(&frame.origin, &dir, &c, radius) {
                    if t >= frame.near && t <= frame.far && best.is_none_or(|b| (t, i) < b) {
                        best = Some((t, i));
                    }
                }
            }
            if let Some((t, i)) = best {
                let r = &s.records[i];
                let c = Vector3::from(r.position.map(f64::from));
                let n = (frame.origin + dir * t - c) / radius;
                let v = r.velocity.map(f64::from);
                let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let [cr, cg, cb] = shade(cmap.color(speed), &dir, &n);
                let k = y * w + x;
                img.rgba[k] = [cr, cg, cb, 255];
                img.depth[k] = t as f32;
            }
        }
    }
    img
}

#[test]
fn axial_sphere_hits_centre_pixel() {
    let s = snap(&[([0.0; 3], [0.0; 3])]);
    let cam = axial_camera(10.0);
    let img = render_spheres(&s, &cam, (65, 65), 0.5, &ColorMap::default()).unwrap();
    let c = img.index(32, 32);
    assert!((img.depth[c] as f64 - 9.5).abs() < 1e-5);
    assert_eq!(img.rgba[c][3], 255);
    // the corners see background
    assert_eq!(img.rgba[0], [0, 0, 0, 0]);
    assert_eq!(img.depth[0], f32::INFINITY);
}

#[test]
fn empty_snapshot_is_background() {
    let img = render_spheres(&snap(&[]), &axial_camera(5.0), (8, 6), 0.3, &ColorMap::default()).unwrap();
    assert_eq!(img, DepthImage::background(8, 6));
}

#[test]
fn zero_size_is_rejected() {
    let r = render_spheres(&snap(&[]), &axial_camera(5.0), (0, 6), 0.3, &ColorMap::default());
    assert!(matches!(r, Err(RenderError::InvalidArgument(_))));
    let r = build_vdi(&snap(&[]), &axial_camera(5.0), (4, 4), 0.3, &ColorMap::default(), 1.0, 0);
    assert!(matches!(r, Err(RenderError::InvalidArgument(_))));
}

#[test]
fn nearer_sphere_wins() {
    let cmap = ColorMap::blue_white_red(0.0, 1.0);
    let s = snap(&[([0.0, 0.0, 3.0], [0.0; 3]), ([0.0, 0.0, 5.0], [1.0, 0.0, 0.0])]);
    let cam = axial_camera(10.0);
    let img = render_spheres(&s, &cam, (33, 33), 0.4, &cmap).unwrap();
    let c = img.index(16, 16);
    assert!((img.depth[c] as f64 - (5.0 - 0.4)).abs() < 1e-5);
    // the nearer sphere is the red one (speed 1); on axis the headlight is full
    assert_eq!(img.rgba[c], [255, 0, 0, 255]);
}

#[test]
fn grid_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cmap = ColorMap::blue_white_red(0.0, 3.0);
    for (n, radius, dist) in [(1, 0.5, 8.0), (40, 0.4, 10.0), (256, 0.3, 12.0), (256, 1.1, 6.0)] {
        let s = random_snap(&mut rng, n, 6.0);
        let cam = box_camera(6.0, dist);
        let fast = render_spheres(&s, &cam, (48, 40), radius, &cmap).unwrap();
        let slow = brute_force(&s, &cam, 48, 40, radius, &cmap);
        assert_eq!(fast, slow, "n={n} radius={radius}");
    }
}

#[test]
fn camera_inside_the_cloud_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cmap = ColorMap::default();
    let s = random_snap(&mut rng, 200, 8.0);
    let cam = CameraPose::look_at(
        Point3::new(4.0, 4.0, 4.0),
        Point3::new(0.0, 1.0, 0.5),
        Vector3::y(),
        70.0,
        0.2,
        50.0,
    )
    .unwrap();
    let fast = render_spheres(&s, &cam, (40, 30), 0.35, &cmap).unwrap();
    assert_eq!(fast, brute_force(&s, &cam, 40, 30, 0.35, &cmap));
}

#[test]
fn hits_at_low_resolution_are_hit_at_high_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_snap(&mut rng, 300, 8.0);
    let scene = SphereScene::new(&s, 0.3, 2.5).unwrap();
    let cam = box_camera(8.0, 14.0);
    let mut low: Vec<u32> = scene.render_ids(&cam, 256, 256).unwrap().into_iter().flatten().collect();
    let mut high: Vec<u32> = scene.render_ids(&cam, 1024, 1024).unwrap().into_iter().flatten().collect();
    low.sort_unstable();
    low.dedup();
    high.sort_unstable();
    high.dedup();
    let missing: Vec<_> = low.iter().filter(|i| high.binary_search(i).is_err()).collect();
    assert!(missing.is_empty(), "{missing:?}");
}

#[test]
fn single_opaque_sphere_gives_one_segment() {
    let s = snap(&[([0.0; 3], [0.0; 3])]);
    let cam = axial_camera(10.0);
    let vdi = build_vdi(&s, &cam, (33, 33), 1.0, &ColorMap::default(), 1.0, 8).unwrap();
    let c = vdi.pixel(16 * 33 + 16);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].rgba[3], 1.0);
    assert!((c[0].front - 9.0).abs() < 1e-5 && (c[0].back - 11.0).abs() < 1e-5);
    assert!(vdi.pixel(0).is_empty());
}

/// Composites raw intervals front to back, the oracle for merging.
fn composite_raw(list: &[Supersegment]) -> [f32; 4] {
    list.iter().fold([0.0; 4], |acc, s| over(acc, s.rgba))
}

#[test]
fn collinear_spheres_respect_cap_and_colour() {
    let pts: Vec<_> = (0..10)
        .map(|k| ([0.0, 0.0, -(k as f32) * 1.5], [k as f32 * 0.3, 0.0, 0.0]))
        .collect();
    let s = snap(&pts);
    let cam = axial_camera(5.0);
    let cmap = ColorMap::blue_white_red(0.0, 3.0);
    let (w, h) = (21, 21);
    let vdi = build_vdi(&s, &cam, (w, h), 0.5, &cmap, 0.4, 4).unwrap();
    vdi.check_invariants().unwrap();
    let centre = 10 * w + 10;
    assert!(vdi.pixel(centre).len() <= 4);

    // raw intervals, unmerged
    let scene = SphereScene::new(&s, 0.5, 2.5).unwrap();
    let frame = cam.frame(w, h);
    let dir = frame.ray_dir(10, 10);
    let mut hits = Vec::new();
    scene.all_hits(&frame, &dir, &mut hits);
    assert_eq!(hits.len(), 10);
    let raw: Vec<Supersegment> = hits
        .iter()
        .map(|&(t0, t1, i)| {
            let n = (frame.origin + dir * t0 - scene.center(i as usize)) / 0.5;
            let rgb = shade(cmap.color(scene.speed(i as usize)), &dir, &n);
            let c = rgb.map(|v| v as f32 / 255.0 * 0.4);
            Supersegment {
                front: t0 as f32,
                back: t1 as f32,
                rgba: [c[0], c[1], c[2], 0.4],
            }
        })
        .collect();
    let expect = composite_raw(&raw).map(to_u8);
    let got = composite_raw(vdi.pixel(centre)).map(to_u8);
    for k in 0..4 {
        assert!((expect[k] as i32 - got[k] as i32).abs() <= 2, "{expect:?} {got:?}");
    }
}

#[test]
fn identity_reprojection_is_exact_for_opaque_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cmap = ColorMap::default();
    let s = random_snap(&mut rng, 400, 8.0);
    let cam = box_camera(8.0, 14.0);
    let direct = render_spheres(&s, &cam, (96, 80), 0.4, &cmap).unwrap();
    let vdi = build_vdi(&s, &cam, (96, 80), 0.4, &cmap, 1.0, 8).unwrap();
    vdi.check_invariants().unwrap();
    assert_eq!(composite_vdi_to_image(&vdi, &cam), direct);
}

#[test]
fn empty_vdi_composites_to_background() {
    let cam = axial_camera(4.0);
    let vdi = Vdi::empty(5, 4, cam, 8);
    assert_eq!(composite_vdi_to_image(&vdi, &cam), DepthImage::background(5, 4));
    let moved = cam.orbit(Point3::origin(), Vector3::y(), 3.0);
    assert_eq!(composite_vdi_to_image(&vdi, &moved), DepthImage::background(5, 4));
}

#[test]
fn vdi_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_snap(&mut rng, 50, 5.0);
    let cam = box_camera(5.0, 9.0);
    let vdi = build_vdi(&s, &cam, (24, 20), 0.5, &ColorMap::default(), 0.6, 3).unwrap();
    let bytes = vdi.to_bytes();
    assert_eq!(&bytes[..4], b"VDIF");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u16::from_le_bytes(bytes[8..10].try_into().unwrap()), 24);
    assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 3);
    let segs: usize = vdi.counts().sum();
    assert_eq!(bytes.len(), 14 + 88 + 2 * 24 * 20 + 24 * segs);
    assert_eq!(Vdi::from_bytes(&bytes).unwrap(), vdi);
    assert!(Vdi::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vdi_invariants_hold(seed in any::<u64>(), n in 0usize..60, opacity in 0.05f64..1.0, s_max in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_snap(&mut rng, n, 4.0);
        let cam = box_camera(4.0, 7.0);
        let vdi = build_vdi(&s, &cam, (20, 16), 0.45, &ColorMap::default(), opacity, s_max).unwrap();
        prop_assert!(vdi.check_invariants().is_ok(), "{:?}", vdi.check_invariants());
    }
}

/// Fraction of pixels within `tol` on every channel, skipping pixels whose
/// 3x3 neighbourhood in `oracle` mixes foreground and background.
fn agreement(oracle: &DepthImage, got: &DepthImage, tol: i32) -> f64 {
    let (w, h) = (oracle.width, oracle.height);
    let (mut ok, mut total) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let mut kinds = [false; 2];
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    kinds[oracle.is_background(yy * w + xx) as usize] = true;
                }
            }
            if kinds[0] && kinds[1] {
                continue;
            }
            total += 1;
            let i = y * w + x;
            if (0..4).all(|k| (oracle.rgba[i][k] as i32 - got.rgba[i][k] as i32).abs() <= tol) {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}

#[test]
fn one_degree_reprojection_matches_fresh_render() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // 6^3 lattice with spacing 1.2 and well-resolved spheres
    let pts: Vec<_> = (0..216)
        .map(|i| {
            let p = [i % 6, i / 6 % 6, i / 36].map(|k| 0.6 + 1.2 * k as f32);
            (p, [0; 3].map(|_| rng.gen_range(-2.0..2.0)))
        })
        .collect();
    let s = snap(&pts);
    let c = Point3::new(3.6, 3.6, 3.6);
    let cam = CameraPose::look_at(c + Vector3::new(0.0, 0.0, 14.4), c, Vector3::y(), 45.0, 0.1, 1000.0).unwrap();
    let moved = cam.orbit(c, Vector3::y(), 1.0);
    let cmap = ColorMap::default();
    let vdi = build_vdi(&s, &cam, (256, 256), 0.5, &cmap, 1.0, 8).unwrap();
    let fresh = render_spheres(&s, &moved, (256, 256), 0.5, &cmap).unwrap();
    let frac = agreement(&fresh, &composite_vdi_to_image(&vdi, &moved), 8);
    assert!(frac >= 0.95, "agreement {frac}");
}
