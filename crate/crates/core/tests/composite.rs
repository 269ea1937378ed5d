use std::thread;
use std::time::Duration;

use insitu_core::composite::{
    binary_swap, composite_depth_pair, composite_frame, merge_vdi_pair, Composite, CompositeError,
    CompositeTopology, VdiLists, DEPTH_PIXEL_SIZE,
};
use insitu_core::net::Mesh;
use insitu_core::render::{
    build_vdi, composite_vdi_to_image, over, to_u8, CameraPose, ColorMap, DepthImage, Supersegment,
    Vdi,
};
use insitu_core::snapshot::{ParticleRecord, ParticleSnapshot};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TIMEOUT: Duration = Duration::from_secs(5);

/// Depths drawn from a small set so that ties are common.
fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthImage {
    let mut img = DepthImage::background(w, h);
    for i in 0..w * h {
        if rng.gen_bool(0.7) {
            img.depth[i] = rng.gen_range(1..6) as f32;
            img.rgba[i] = [rng.gen(), rng.gen(), rng.gen(), 255];
        }
    }
    img
}

/// Per pixel the first image holding the smallest depth.
fn serial_fold(images: &[DepthImage]) -> DepthImage {
    let mut out = images[0].clone();
    for img in &images[1..] {
        for i in 0..out.pixel_count() {
            if img.depth[i] < out.depth[i] {
                out.depth[i] = img.depth[i];
                out.rgba[i] = img.rgba[i];
            }
        }
    }
    out
}

/// Runs `composite_frame` on `k` in-process ranks.
fn run_ranks<C: Composite + Send + 'static>(
    locals: Vec<C>,
) -> Vec<Result<(Option<C>, insitu_core::composite::SwapStats), CompositeError>> {
    let k = locals.len();
    let topo = CompositeTopology::new(k).unwrap();
    let meshes = Mesh::in_process(k).unwrap();
    let handles: Vec<_> = meshes
        .into_iter()
        .zip(locals)
        .map(|(mut mesh, local)| thread::spawn(move || composite_frame(local, &mut mesh, &topo, 7, TIMEOUT)))
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

fn images_equal(a: &DepthImage, b: &DepthImage) -> bool {
    a.rgba == b.rgba && a.depth.iter().zip(&b.depth).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn swap_and_gather_equal_serial_fold() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1usize, 2, 4, 8] {
        for scene in 0..50 {
            let (w, h) = if scene % 2 == 0 { (16, 12) } else { (13, 7) };
            let images: Vec<_> = (0..k).map(|_| random_image(&mut rng, w, h)).collect();
            let expected = serial_fold(&images);
            let results = run_ranks(images);
            let frame = results.into_iter().next().unwrap().unwrap().0.unwrap();
            assert!(images_equal(&frame, &expected), "k {k} scene {scene}");
        }
    }
}

#[test]
fn swap_traffic_matches_halving_schedule() {
    let (w, h) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [1usize, 2, 4, 8] {
        let images: Vec<_> = (0..k).map(|_| random_image(&mut rng, w, h)).collect();
        for (rank, r) in run_ranks(images).into_iter().enumerate() {
            let stats = r.unwrap().1;
            let want = (DEPTH_PIXEL_SIZE * w * h * (k - 1) / k) as u64;
            assert_eq!(stats.swap_bytes, want, "k {k} rank {rank}");
            let gather = if rank == 0 { 0 } else { (DEPTH_PIXEL_SIZE * w * h / k) as u64 };
            assert_eq!(stats.gather_bytes, gather);
        }
    }
}

#[test]
fn owned_regions_tile_the_image() {
    for k in [1usize, 2, 4, 8, 16] {
        let topo = CompositeTopology::new(k).unwrap();
        for pixels in [0usize, 1, 7, 64, 1000] {
            let mut ranges: Vec<_> = (0..k).map(|r| topo.owned_range(r, pixels)).collect();
            ranges.sort_by_key(|r| r.start);
            let mut next = 0;
            for r in &ranges {
                assert_eq!(r.start, next);
                next = r.end;
            }
            assert_eq!(next, pixels);
            if pixels % k == 0 {
                assert!(ranges.iter().all(|r| r.len() == pixels / k));
            }
        }
    }
}

#[test]
fn non_power_of_two_is_rejected() {
    for k in [0usize, 3, 6, 12] {
        assert!(matches!(CompositeTopology::new(k), Err(CompositeError::InvalidArgument(_))));
    }
}

#[test]
fn frame_sequence_mismatch_is_a_protocol_error() {
    let topo = CompositeTopology::new(2).unwrap();
    let mut meshes = Mesh::in_process(2).unwrap();
    let mut m1 = meshes.pop().unwrap();
    let mut m0 = meshes.pop().unwrap();
    let t = thread::spawn(move || {
        let mut img = DepthImage::background(4, 4);
        binary_swap(&mut img, &mut m1, &topo, 8, TIMEOUT).map(|_| ())
    });
    let mut img = DepthImage::background(4, 4);
    let err = binary_swap(&mut img, &mut m0, &topo, 7, TIMEOUT).unwrap_err();
    assert!(matches!(err, CompositeError::Protocol(_)), "{err}");
    assert!(matches!(t.join().unwrap(), Err(CompositeError::Protocol(_))));
}

#[test]
fn partner_loss_is_an_error() {
    let topo = CompositeTopology::new(2).unwrap();
    let mut meshes = Mesh::in_process(2).unwrap();
    drop(meshes.pop());
    let mut m0 = meshes.pop().unwrap();
    let mut img = DepthImage::background(4, 4);
    let err = binary_swap(&mut img, &mut m0, &topo, 1, Duration::from_millis(500)).unwrap_err();
    assert!(matches!(err, CompositeError::Net(_)), "{err}");
}

#[test]
fn pair_composite_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_image(&mut rng, 9, 5);
    let bg = DepthImage::background(9, 5);
    assert!(images_equal(&composite_depth_pair(&bg, &x).unwrap(), &x));
    assert!(images_equal(&composite_depth_pair(&x, &x).unwrap(), &x));
    assert!(composite_depth_pair(&x, &DepthImage::background(5, 9)).is_err());
}

proptest! {
    #[test]
    fn depth_compositing_is_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, c] = [0; 3].map(|_| random_image(&mut rng, 6, 4));
        let left = composite_depth_pair(&composite_depth_pair(&a, &b).unwrap(), &c).unwrap();
        let right = composite_depth_pair(&a, &composite_depth_pair(&b, &c).unwrap()).unwrap();
        prop_assert!(images_equal(&left, &right));
        // commutative wherever the depths differ
        let ab = composite_depth_pair(&a, &b).unwrap();
        let ba = composite_depth_pair(&b, &a).unwrap();
        for i in 0..ab.pixel_count() {
            if a.depth[i] != b.depth[i] {
                prop_assert_eq!(ab.rgba[i], ba.rgba[i]);
            }
        }
    }
}

fn camera() -> CameraPose {
    CameraPose::look_at(Point3::new(2.0, 2.0, 20.0), Point3::new(2.0, 2.0, 0.0), Vector3::y(), 30.0, 0.1, 100.0)
        .unwrap()
}

fn slab(rng: &mut ChaCha8Rng, n: usize, z: std::ops::Range<f32>) -> ParticleSnapshot {
    ParticleSnapshot {
        sim_step: 0,
        sim_time: 0.0,
        records: (0..n)
            .map(|_| ParticleRecord {
                position: [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(z.clone())],
                velocity: [0; 3].map(|_| rng.gen_range(-2.0..2.0)),
            })
            .collect(),
    }
}

#[test]
fn merged_vdi_matches_image_space_over() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cmap = ColorMap::default();
    let cam = camera();
    // b is nearer the camera than a throughout
    let a = build_vdi(&slab(&mut rng, 40, 0.0..3.0), &cam, (48, 48), 0.4, &cmap, 0.5, 8).unwrap();
    let b = build_vdi(&slab(&mut rng, 40, 6.0..9.0), &cam, (48, 48), 0.4, &cmap, 0.5, 8).unwrap();
    let merged = composite_vdi_to_image(&merge_vdi_pair(&a, &b).unwrap(), &cam);
    let (ia, ib) = (composite_vdi_to_image(&a, &cam), composite_vdi_to_image(&b, &cam));
    for i in 0..merged.pixel_count() {
        let f = |c: [u8; 4]| c.map(|v| v as f32 / 255.0);
        let want = over(f(ib.rgba[i]), f(ia.rgba[i])).map(to_u8);
        for ch in 0..4 {
            assert!((merged.rgba[i][ch] as i32 - want[ch] as i32).abs() <= 2, "pixel {i}");
        }
    }
}

fn seg(front: f32, back: f32) -> Supersegment {
    Supersegment {
        front,
        back,
        rgba: [0.2, 0.1, 0.0, 0.5],
    }
}

#[test]
fn merge_vdi_pair_edge_cases() {
    let cam = camera();
    let a = Vdi::from_lists(2, 1, cam, 4, vec![vec![seg(1.0, 2.0)], vec![]]);
    let b = Vdi::from_lists(2, 1, cam, 4, vec![vec![seg(3.0, 4.0)], vec![seg(5.0, 6.0)]]);
    let empty = Vdi::empty(2, 1, cam, 4);
    assert_eq!(merge_vdi_pair(&empty, &b).unwrap(), b);
    let m = merge_vdi_pair(&a, &b).unwrap();
    assert_eq!(m.pixel(0), &[seg(1.0, 2.0), seg(3.0, 4.0)]);
    assert_eq!(m.pixel(1), &[seg(5.0, 6.0)]);
    let moved = cam.orbit(Point3::origin(), Vector3::y(), 1.0);
    assert!(merge_vdi_pair(&a, &Vdi::empty(2, 1, moved, 4)).is_err());
}

#[test]
fn vdi_swap_equals_pairwise_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cmap = ColorMap::default();
    let cam = camera();
    let vdis: Vec<Vdi> = (0..4)
        .map(|r| {
            let z0 = r as f32 * 2.0;
            build_vdi(&slab(&mut rng, 30, z0..z0 + 2.5), &cam, (24, 24), 0.4, &cmap, 0.4, 3).unwrap()
        })
        .collect();
    let expected = merge_vdi_pair(
        &merge_vdi_pair(&vdis[0], &vdis[1]).unwrap(),
        &merge_vdi_pair(&vdis[2], &vdis[3]).unwrap(),
    )
    .unwrap();
    let locals: Vec<VdiLists> = vdis.iter().map(VdiLists::from).collect();
    let frame = run_ranks(locals).into_iter().next().unwrap().unwrap().0.unwrap();
    assert_eq!(Vdi::from(frame), expected);
}
