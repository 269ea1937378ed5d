//! Byte-exact wire fixtures shared with clients. Set `INSITU_BLESS=1` to
//! rewrite them after an intentional format change.

use std::collections::BTreeMap;
use std::path::PathBuf;

use insitu_core::render::{composite_vdi_to_image, render_spheres, CameraPose, ColorMap, RenderMode, Vdi};
use insitu_core::snapshot::{ParticleRecord, ParticleSnapshot};
use insitu_core::steer::{CommandKind, RankState, VizParam};
use insitu_core::stream::{
    encode_frame, ClientMessage, ClientParser, Echo, Encoding, FrameImage, ServerMessage, StatsMessage,
    SteerResponse,
};
use nalgebra::{Point3, Vector3};

const W: usize = 48;
const H: usize = 32;
const ASPECT: f64 = W as f64 / H as f64;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scene() -> ParticleSnapshot {
    let mut records = Vec::new();
    for i in 0..27 {
        let (x, y, z) = (i % 3, (i / 3) % 3, i / 9);
        records.push(ParticleRecord {
            position: [1.0 + 2.0 * x as f32, 1.0 + 2.0 * y as f32, 1.0 + 2.0 * z as f32],
            velocity: [0.25 * x as f32, 0.5 * y as f32, 0.75 * z as f32],
        });
    }
    ParticleSnapshot {
        sim_step: 1200,
        sim_time: 2.4,
        records,
    }
}

fn camera() -> CameraPose {
    CameraPose::look_at(
        Point3::new(3.5, 4.0, 14.0),
        Point3::new(3.0, 3.0, 3.0),
        Vector3::y(),
        40.0,
        0.1,
        40.0,
    )
    .unwrap()
}

fn reproject_camera() -> CameraPose {
    camera().orbit(Point3::new(3.0, 3.0, 3.0), Vector3::y(), 1.0)
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn rgba_bytes(px: &[[u8; 4]]) -> Vec<u8> {
    px.iter().flatten().copied().collect()
}

fn fixtures() -> BTreeMap<&'static str, Vec<u8>> {
    let snap = scene();
    let cmap = ColorMap::blue_white_red(0.0, 2.0);
    let img = render_spheres(&snap, &camera(), (W, H), 0.6, &cmap).unwrap();
    let vdi: Vdi = insitu_core::render::build_vdi(&snap, &camera(), (W, H), 0.6, &cmap, 0.7, 4).unwrap();
    let frame = |image, enc| encode_frame(image, enc, 7, 1200, 123_456_789).unwrap().encode();

    let mut m = BTreeMap::new();
    m.insert("frame_raw.bin", frame(FrameImage::Image(&img), Encoding::Raw));
    m.insert("frame_rle.bin", frame(FrameImage::Image(&img), Encoding::Rle));
    m.insert("frame_vdi.bin", frame(FrameImage::Vdi(&vdi), Encoding::Vdi));
    m.insert(
        "stat.bin",
        StatsMessage {
            frames_per_second: 59.5,
            sim_steps_per_second: 812.25,
            last_steer_roundtrip_ms: 12.5,
            rank_states: vec![RankState::Alive, RankState::Lost, RankState::Alive, RankState::Alive],
        }
        .encode(),
    );
    m.insert(
        "srsp_accepted.bin",
        SteerResponse::Accepted {
            request_id: 42,
            seq: 17,
            apply_at_step: 1202,
        }
        .encode(),
    );
    m.insert(
        "srsp_rejected.bin",
        SteerResponse::Rejected {
            request_id: 43,
            reason: "unknown parameter \"gravity\"".into(),
        }
        .encode(),
    );
    let steer = |id, kind| ClientMessage::Steer { request_id: id, kind }.encode();
    m.insert("ster_set.bin", steer(1, CommandKind::set("target_temperature", 1.25)));
    m.insert("ster_pause.bin", steer(2, CommandKind::Pause));
    m.insert("ster_resume.bin", steer(3, CommandKind::Resume));
    m.insert("ster_terminate.bin", steer(4, CommandKind::Terminate));
    let cam_msg = VizParam::SetCamera(camera()).encode();
    // the camera message carries the aspect it was chosen for; pin it to ours
    let mut cam_fixture = cam_msg[..cam_msg.len() - 8].to_vec();
    cam_fixture.extend(ASPECT.to_le_bytes());
    m.insert("vizp_camera.bin", cam_fixture);
    m.insert("vizp_color_range.bin", VizParam::SetColorRange { vmin: 0.5, vmax: 2.5 }.encode());
    m.insert("vizp_radius.bin", VizParam::SetRadius(0.45).encode());
    m.insert("vizp_mode.bin", VizParam::SetMode(RenderMode::Vdi).encode());
    m.insert(
        "echo.bin",
        ClientMessage::Echo(Echo {
            frame_seq: 7,
            capture_us: 123_456_789,
        })
        .encode(),
    );
    m.insert("scene.vdi", vdi.to_bytes());
    m.insert("reproject_camera.f64", f64_bytes(&reproject_camera().to_wire(ASPECT)));
    m.insert(
        "reproject_expected.rgba",
        rgba_bytes(&composite_vdi_to_image(&vdi, &reproject_camera()).rgba),
    );
    m
}

#[test]
fn fixtures_match_generated_bytes() {
    let bless = std::env::var_os("INSITU_BLESS").is_some();
    let dir = dir();
    if bless {
        std::fs::create_dir_all(&dir).unwrap();
    }
    for (name, bytes) in fixtures() {
        let path = dir.join(name);
        if bless {
            std::fs::write(&path, &bytes).unwrap();
            continue;
        }
        let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(want == bytes, "{name} differs from the generated bytes");
    }
}

#[test]
fn server_fixtures_decode() {
    let f = fixtures();
    for name in ["frame_raw.bin", "frame_rle.bin", "frame_vdi.bin", "stat.bin", "srsp_accepted.bin", "srsp_rejected.bin"] {
        let (msg, used) = ServerMessage::decode(&f[name]).unwrap().unwrap();
        assert_eq!(used, f[name].len(), "{name}");
        if let ServerMessage::Frame(fr) = msg {
            assert_eq!((fr.width as usize, fr.height as usize, fr.frame_seq), (W, H, 7));
            match fr.encoding {
                Encoding::Vdi => assert_eq!(fr.vdi().unwrap().to_bytes(), f["scene.vdi"]),
                _ => assert_eq!(rgba_bytes(&fr.pixels().unwrap()).len(), W * H * 4),
            }
        }
    }
    let raw = ServerMessage::decode(&f["frame_raw.bin"]).unwrap().unwrap().0;
    let rle = ServerMessage::decode(&f["frame_rle.bin"]).unwrap().unwrap().0;
    match (raw, rle) {
        (ServerMessage::Frame(a), ServerMessage::Frame(b)) => assert_eq!(a.pixels().unwrap(), b.pixels().unwrap()),
        _ => panic!("frames expected"),
    }
}

#[test]
fn client_fixtures_parse_back() {
    let f = fixtures();
    let mut parser = ClientParser::default();
    let names = [
        "ster_set.bin",
        "ster_pause.bin",
        "ster_resume.bin",
        "ster_terminate.bin",
        "vizp_camera.bin",
        "vizp_color_range.bin",
        "vizp_radius.bin",
        "vizp_mode.bin",
        "echo.bin",
    ];
    for n in names {
        parser.feed(&f[n]);
    }
    let mut got = Vec::new();
    while let Some(m) = parser.next_message().unwrap() {
        got.push(m);
    }
    assert_eq!(got.len(), names.len());
    assert_eq!(
        got[0],
        ClientMessage::Steer {
            request_id: 1,
            kind: CommandKind::set("target_temperature", 1.25)
        }
    );
    match &got[4] {
        ClientMessage::Viz(VizParam::SetCamera(c)) => {
            let back = c.to_wire(ASPECT);
            let want = camera().to_wire(ASPECT);
            assert!(back.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn reprojection_fixture_follows_from_the_vdi() {
    let f = fixtures();
    let vdi = Vdi::from_bytes(&f["scene.vdi"]).unwrap();
    let cam: Vec<f64> = f["reproject_camera.f64"]
        .chunks(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let img = composite_vdi_to_image(&vdi, &CameraPose::from_wire(&cam).unwrap());
    assert_eq!(rgba_bytes(&img.rgba), f["reproject_expected.rgba"]);
}
