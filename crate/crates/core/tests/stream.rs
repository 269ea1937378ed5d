use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use insitu_core::render::{CameraPose, DepthImage, Supersegment, Vdi};
use insitu_core::steer::{CommandKind, RankState, VizParam};
use insitu_core::stream::{
    encode_frame, ClientMessage, Echo, Encoding, FrameImage, FrameMessage, Inbound, ServerConfig, ServerMessage,
    StreamClient, StreamServer, SteerResponse, FRAME_HEADER_LEN,
};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

const WAIT: Duration = Duration::from_secs(5);

fn server() -> (StreamServer, std::sync::mpsc::Receiver<Inbound>) {
    let config = ServerConfig {
        stats_interval: Duration::from_millis(50),
        ..ServerConfig::default()
    };
    StreamServer::bind("127.0.0.1:0", config).unwrap()
}

fn wait_for_clients(s: &StreamServer, n: usize) {
    let start = Instant::now();
    while s.client_count() != n {
        assert!(start.elapsed() < WAIT, "expected {n} clients, have {}", s.client_count());
        thread::sleep(Duration::from_millis(5));
    }
}

fn next_frame(c: &mut StreamClient) -> FrameMessage {
    c.recv_matching(WAIT, |m| match m {
        ServerMessage::Frame(f) => Some(f),
        _ => None,
    })
    .unwrap()
}

fn image(w: usize, h: usize, seed: u8) -> DepthImage {
    let mut img = DepthImage::background(w, h);
    for (i, p) in img.rgba.iter_mut().enumerate() {
        *p = [(i / 7) as u8 ^ seed, seed, 3, 255];
    }
    img
}

#[test]
fn frame_header_layout_is_pinned() {
    let img = image(2, 1, 0);
    let msg = encode_frame(FrameImage::Image(&img), Encoding::Raw, 5, 77, 123_456).unwrap();
    let b = msg.encode();
    assert_eq!(FRAME_HEADER_LEN, 37);
    assert_eq!(&b[..4], b"FRM0");
    assert_eq!(b[4..12], 5u64.to_le_bytes());
    assert_eq!(b[12..20], 77u64.to_le_bytes());
    assert_eq!(b[20..28], 123_456u64.to_le_bytes());
    assert_eq!(b[28..30], 2u16.to_le_bytes());
    assert_eq!(b[30..32], 1u16.to_le_bytes());
    assert_eq!(b[32], 0);
    assert_eq!(b[33..37], 8u32.to_le_bytes());
    assert_eq!(b.len(), 45);
    assert_eq!(FrameMessage::decode(&b).unwrap(), (msg, 45));
}

#[test]
fn two_black_pixels_rle() {
    let mut img = DepthImage::background(2, 1);
    img.rgba = vec![[0, 0, 0, 255]; 2];
    let msg = encode_frame(FrameImage::Image(&img), Encoding::Rle, 1, 0, 0).unwrap();
    assert_eq!(msg.payload, vec![2, 0, 0, 0, 255]);
    assert_eq!(msg.encode()[32], 1);
}

#[test]
fn vdi_payload_is_the_vdi_file() {
    let cam = CameraPose::look_at(Point3::new(0.0, 0.0, 5.0), Point3::origin(), Vector3::y(), 40.0, 0.1, 50.0)
        .unwrap();
    let seg = Supersegment {
        front: 1.0,
        back: 2.0,
        rgba: [0.1, 0.2, 0.3, 0.5],
    };
    let vdi = Vdi::from_lists(2, 2, cam, 4, vec![vec![seg], vec![], vec![seg, seg], vec![]]);
    let msg = encode_frame(FrameImage::Vdi(&vdi), Encoding::Vdi, 1, 0, 0).unwrap();
    assert_eq!(msg.payload, vdi.to_bytes());
    let (back, _) = FrameMessage::decode(&msg.encode()).unwrap();
    assert_eq!(back.vdi().unwrap(), vdi);
}

#[test]
fn mismatched_encoding_is_an_argument_error() {
    let img = image(2, 2, 0);
    assert!(encode_frame(FrameImage::Image(&img), Encoding::Vdi, 1, 0, 0).is_err());
}

proptest! {
    #[test]
    fn raw_and_rle_round_trip(w in 1usize..40, h in 1usize..6, palette in 1u8..4, seed in any::<u64>()) {
        let mut img = DepthImage::background(w, h);
        let mut x = seed;
        for p in &mut img.rgba {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let v = ((x >> 33) as u8) % palette;
            *p = [v, v, 0, 255];
        }
        for enc in [Encoding::Raw, Encoding::Rle] {
            let msg = encode_frame(FrameImage::Image(&img), enc, 1, 2, 3).unwrap();
            let (back, used) = FrameMessage::decode(&msg.encode()).unwrap();
            prop_assert_eq!(used, FRAME_HEADER_LEN + msg.payload.len());
            prop_assert_eq!(back.pixels().unwrap(), img.rgba.clone());
        }
    }
}

#[test]
fn no_client_means_nothing_is_encoded() {
    let (s, _rx) = server();
    let img = image(8, 8, 0);
    assert_eq!(s.publish_frame(FrameImage::Image(&img), Encoding::Raw, 1).unwrap(), 0);
}

#[test]
fn clients_get_independent_sequences() {
    let (s, _rx) = server();
    let img = image(8, 8, 0);
    let mut a = StreamClient::connect(s.local_addr()).unwrap();
    wait_for_clients(&s, 1);
    s.publish_frame(FrameImage::Image(&img), Encoding::Raw, 1).unwrap();
    assert_eq!(next_frame(&mut a).frame_seq, 1);
    let mut b = StreamClient::connect(s.local_addr()).unwrap();
    wait_for_clients(&s, 2);
    s.publish_frame(FrameImage::Image(&img), Encoding::Rle, 2).unwrap();
    assert_eq!(next_frame(&mut a).frame_seq, 2);
    let fb = next_frame(&mut b);
    assert_eq!((fb.frame_seq, fb.sim_step), (1, 2));
    assert_eq!(fb.pixels().unwrap(), img.rgba);
}

#[test]
fn slow_client_gets_newest_and_gaps_match_drops() {
    let (s, _rx) = server();
    let mut c = StreamClient::connect(s.local_addr()).unwrap();
    wait_for_clients(&s, 1);
    // large enough that the first frame blocks in the socket while the
    // client is not reading
    let (w, h) = (1024, 1024);
    s.publish_frame(FrameImage::Image(&image(w, h, 1)), Encoding::Raw, 1).unwrap();
    thread::sleep(Duration::from_millis(200));
    for step in 2..=4 {
        s.publish_frame(FrameImage::Image(&image(w, h, step as u8)), Encoding::Raw, step).unwrap();
    }
    let first = next_frame(&mut c);
    let second = next_frame(&mut c);
    assert_eq!(first.frame_seq, 1);
    assert_eq!((second.frame_seq, second.sim_step), (4, 4));
    assert_eq!(second.pixels().unwrap(), image(w, h, 4).rgba);
    let counters = s.client_counters()[0];
    assert_eq!(counters.offered, 4);
    assert_eq!(counters.dropped, 2);
    assert_eq!(second.frame_seq - first.frame_seq - 1, counters.dropped);
}

#[test]
fn disconnect_is_reaped() {
    let (s, _rx) = server();
    let c = StreamClient::connect(s.local_addr()).unwrap();
    wait_for_clients(&s, 1);
    drop(c);
    wait_for_clients(&s, 0);
    s.publish_frame(FrameImage::Image(&image(4, 4, 0)), Encoding::Raw, 1).unwrap();
}

#[test]
fn steering_requests_are_forwarded_and_answered() {
    let (s, rx) = server();
    let mut c = StreamClient::connect(s.local_addr()).unwrap();
    c.send(&ClientMessage::Steer {
        request_id: 42,
        kind: CommandKind::set("dt", 0.002),
    })
    .unwrap();
    c.send(&ClientMessage::Viz(VizParam::SetRadius(0.4))).unwrap();
    let Inbound::Steer { client, request_id, kind } = rx.recv_timeout(WAIT).unwrap() else {
        panic!("expected a steering request");
    };
    assert_eq!((request_id, kind), (42, CommandKind::set("dt", 0.002)));
    assert_eq!(rx.recv_timeout(WAIT).unwrap(), Inbound::Viz(VizParam::SetRadius(0.4)));
    let resp = SteerResponse::Accepted {
        request_id: 42,
        seq: 1,
        apply_at_step: 12,
    };
    s.respond(client, &resp);
    let got = c
        .recv_matching(WAIT, |m| match m {
            ServerMessage::Response(r) => Some(r),
            _ => None,
        })
        .unwrap();
    assert_eq!(got, resp);
}

#[test]
fn echo_feeds_stats() {
    let (s, _rx) = server();
    s.set_stats(30.0, 500.0, vec![RankState::Alive, RankState::Lost]);
    let mut c = StreamClient::connect(s.local_addr()).unwrap();
    let stats = c
        .recv_matching(WAIT, |m| match m {
            ServerMessage::Stats(st) => Some(st),
            _ => None,
        })
        .unwrap();
    assert!(stats.last_steer_roundtrip_ms.is_nan());
    assert_eq!(stats.rank_states, vec![RankState::Alive, RankState::Lost]);
    s.publish_frame(FrameImage::Image(&image(4, 4, 0)), Encoding::Raw, 1).unwrap();
    let f = next_frame(&mut c);
    thread::sleep(Duration::from_millis(10));
    c.send(&ClientMessage::Echo(Echo {
        frame_seq: f.frame_seq,
        capture_us: f.capture_us,
    }))
    .unwrap();
    let rt = c
        .recv_matching(WAIT, |m| match m {
            ServerMessage::Stats(st) if !st.last_steer_roundtrip_ms.is_nan() => Some(st.last_steer_roundtrip_ms),
            _ => None,
        })
        .unwrap();
    assert!(rt >= 10.0 && rt < 1000.0, "{rt}");
    assert_eq!(s.roundtrip_ms(), Some(rt));
}

#[test]
fn websocket_clients_get_the_same_messages() {
    let (s, rx) = server();
    let stream = TcpStream::connect(s.local_addr()).unwrap();
    let url = format!("ws://{}/", s.local_addr());
    let (mut ws, _) = tungstenite::client(url.as_str(), stream).unwrap();
    wait_for_clients(&s, 1);
    let img = image(5, 3, 9);
    s.publish_frame(FrameImage::Image(&img), Encoding::Rle, 8).unwrap();
    let frame = loop {
        match ws.read().unwrap() {
            tungstenite::Message::Binary(b) if b.starts_with(b"FRM0") => break FrameMessage::decode(&b).unwrap().0,
            _ => {}
        }
    };
    assert_eq!((frame.frame_seq, frame.sim_step), (1, 8));
    assert_eq!(frame.pixels().unwrap(), img.rgba);
    ws.send(tungstenite::Message::Binary(ClientMessage::Viz(VizParam::SetRadius(0.7)).encode()))
        .unwrap();
    assert_eq!(rx.recv_timeout(WAIT).unwrap(), Inbound::Viz(VizParam::SetRadius(0.7)));
}
