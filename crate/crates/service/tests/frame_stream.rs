mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{drive_to_ready, post, start, write_files};
use futures::StreamExt;
use serde_json::json;
use splatedit_core::editing::{recompose, transform_object, RigidTransform, TransformRecord};
use splatedit_core::renderer::{render, Channels};
use splatedit_core::{Camera32, Scene32};
use splatedit_service::api::{split_frame_message, FrameHeader, FrameKind};
use splatedit_service::testing::{tiny_fixture, StubPipeline};
use splatedit_service::SessionManager;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

enum Got {
    Frame(FrameHeader, Vec<u8>),
    Beat(FrameHeader),
}

async fn next(ws: &mut Ws, within: Duration) -> Option<Got> {
    loop {
        let msg = tokio::time::timeout(within, ws.next()).await.ok()??.unwrap();
        match msg {
            Message::Binary(b) => {
                let (h, p) = split_frame_message(&b).expect("well-formed frame message");
                return Some(Got::Frame(h, p.to_vec()));
            }
            Message::Text(t) => return Some(Got::Beat(serde_json::from_str(&t).unwrap())),
            _ => continue,
        }
    }
}

/// Frames until one tagged `seq` or later arrives.
async fn frame_at_least(ws: &mut Ws, seq: u64) -> (FrameHeader, Vec<u8>) {
    loop {
        match next(ws, Duration::from_secs(10)).await.expect("frame before timeout") {
            Got::Frame(h, p) if h.seq >= seq => return (h, p),
            _ => {}
        }
    }
}

fn expected_rgb(scene: &Scene32, cam: &Camera32) -> Vec<u8> {
    let f = render(scene, cam, [0.0; 3], Channels::COLOR).unwrap();
    f.color.iter().flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect()
}

struct Ready {
    manager: Arc<SessionManager>,
    base: String,
    id: String,
    _files: common::Files,
}

async fn ready_session() -> Ready {
    let manager = Arc::new(SessionManager::new(Arc::new(StubPipeline::default())));
    let base = start(manager.clone()).await;
    let (scene, cams, labels) = tiny_fixture();
    let files = write_files(&scene, &cams, &labels);
    let c = reqwest::Client::new();
    let (_, body) = post(&c, format!("{base}/sessions"), json!({"v":1,"scene":files.scene,"cameras":files.cameras,"labels":files.labels})).await;
    let id = body["id"].as_str().unwrap().to_string();
    drive_to_ready(&c, &base, &id).await;
    Ready { manager, base, id, _files: files }
}

async fn connect(base: &str, id: &str, query: &str) -> Ws {
    let url = format!("{}/sessions/{id}/frames?{query}", base.replace("http://", "ws://"));
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

fn parts(r: &Ready) -> (Scene32, Scene32, Camera32) {
    let s = r.manager.get(&r.id).unwrap();
    let seg = s.segmentation().unwrap();
    let bg = s.inpainted().unwrap().background;
    let cam = s.current_frame().camera;
    ((*bg).clone(), (*seg.object).clone(), cam)
}

#[tokio::test(flavor = "multi_thread")]
async fn identity_transform_frame_equals_recompose_render() {
    let r = ready_session().await;
    let mut ws = connect(&r.base, &r.id, "format=rgb8&heartbeat_ms=5000").await;
    let c = reqwest::Client::new();
    let (_, ack) = post(&c, format!("{}/sessions/{}/transform", r.base, r.id), json!({"v":1,"quaternion":[1,0,0,0],"translation":[0,0,0]})).await;
    let seq = ack["seq"].as_u64().unwrap();
    let (h, payload) = frame_at_least(&mut ws, seq).await;
    assert_eq!(h.kind, FrameKind::Frame);
    assert_eq!((h.width, h.height), (16, 16));
    let (bg, obj, cam) = parts(&r);
    let want = expected_rgb(&recompose(&bg, &obj).unwrap(), &cam);
    assert_eq!(payload, want);
}

#[tokio::test(flavor = "multi_thread")]
async fn rapid_transforms_last_writer_wins() {
    let r = ready_session().await;
    let mut ws = connect(&r.base, &r.id, "format=rgb8&heartbeat_ms=5000").await;
    let c = reqwest::Client::new();
    let url = format!("{}/sessions/{}/transform", r.base, r.id);
    let t1 = json!({"v":1,"quaternion":[1,0,0,0],"translation":[0.4,0,0]});
    let t2 = json!({"v":1,"quaternion":[1,0,0,0],"translation":[-0.4,0.2,0]});
    let (_, a1) = post(&c, url.clone(), t1).await;
    let (_, a2) = post(&c, url, t2.clone()).await;
    assert!(a2["seq"].as_u64() > a1["seq"].as_u64());
    let (h, payload) = frame_at_least(&mut ws, a2["seq"].as_u64().unwrap()).await;
    assert_eq!(h.seq, a2["seq"].as_u64().unwrap());

    let (bg, obj, cam) = parts(&r);
    let rec = |t: &serde_json::Value| RigidTransform::<f32>::from_record(&serde_json::from_value::<TransformRecord>(t.clone()).unwrap()).unwrap();
    let second = expected_rgb(&recompose(&bg, &transform_object(&obj, &rec(&t2))).unwrap(), &cam);
    assert_eq!(payload, second);
    let first = expected_rgb(&recompose(&bg, &transform_object(&obj, &rec(&json!({"quaternion":[1,0,0,0],"translation":[0.4,0,0]})))).unwrap(), &cam);
    assert_ne!(payload, first);
    // nothing changed since: no further frames
    while let Some(g) = next(&mut ws, Duration::from_millis(300)).await {
        assert!(matches!(g, Got::Beat(_)), "redundant frame after the last edit");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_stream_sends_only_heartbeats() {
    let r = ready_session().await;
    let mut ws = connect(&r.base, &r.id, "format=jpeg&heartbeat_ms=40").await;
    let first = match next(&mut ws, Duration::from_secs(5)).await.unwrap() {
        Got::Frame(h, p) => {
            assert!(p.starts_with(&[0xFF, 0xD8]), "jpeg payload");
            h
        }
        Got::Beat(_) => panic!("current state is sent first"),
    };
    let mut beats = 0;
    let t0 = std::time::Instant::now();
    while t0.elapsed() < Duration::from_millis(500) {
        match next(&mut ws, Duration::from_millis(200)).await {
            Some(Got::Beat(h)) => {
                assert_eq!(h.kind, FrameKind::Heartbeat);
                assert_eq!(h.seq, first.seq);
                beats += 1;
            }
            Some(Got::Frame(..)) => panic!("frame without an edit"),
            None => break,
        }
    }
    assert!(beats >= 3, "{beats} heartbeats");
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_before_ready_waits_for_composite() {
    let manager = Arc::new(SessionManager::new(Arc::new(StubPipeline::default())));
    let base = start(manager.clone()).await;
    let (scene, cams, labels) = tiny_fixture();
    let s = manager.create(scene, cams, Some(labels)).unwrap();
    let mut ws = connect(&base, &s.id, "format=rgb8&heartbeat_ms=30").await;
    for _ in 0..3 {
        assert!(matches!(next(&mut ws, Duration::from_secs(2)).await, Some(Got::Beat(_))));
    }
    let c = reqwest::Client::new();
    drive_to_ready(&c, &base, &s.id).await;
    let (h, _) = frame_at_least(&mut ws, 0).await;
    assert_eq!(h.seq, s.status().seq);
}
