mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use common::{post, start, status, wait_idle, write_files};
use serde_json::json;
use splatedit_core::imaging::decode_mask_png;
use splatedit_service::testing::{tiny_fixture, StubPipeline};
use splatedit_service::{Phase, SessionManager};

async fn stub_server() -> (Arc<StubPipeline>, String, common::Files) {
    let stub = Arc::new(StubPipeline::default());
    let base = start(Arc::new(SessionManager::new(stub.clone()))).await;
    let (scene, cams, labels) = tiny_fixture();
    (stub, base, write_files(&scene, &cams, &labels))
}

async fn create(client: &reqwest::Client, base: &str, f: &common::Files) -> String {
    let (code, body) = post(client, format!("{base}/sessions"), json!({"v":1,"scene":f.scene,"cameras":f.cameras,"labels":f.labels})).await;
    assert_eq!(code, 201, "{body}");
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn create_session_examples() {
    let (_, base, f) = stub_server().await;
    let c = reqwest::Client::new();
    let (code, body) = post(&c, format!("{base}/sessions"), json!({"v":1,"scene":f.scene,"cameras":f.cameras})).await;
    assert_eq!(code, 201);
    assert_eq!(body, json!({"v":1,"id":"s-1","phase":"loaded"}));

    let (code, body) = post(&c, format!("{base}/sessions"), json!({"v":1,"scene":f.dir.path().join("nope.ply"),"cameras":f.cameras})).await;
    assert_eq!(code, 404);
    assert_eq!(body["error"]["kind"], "not_found");

    let text = std::fs::read(&f.scene).unwrap();
    let broken: Vec<u8> = String::from_utf8_lossy(&text[..text.windows(10).position(|w| w == b"end_header").unwrap()])
        .replace("property float opacity", "property float opacitz")
        .into_bytes()
        .into_iter()
        .chain(text[text.windows(10).position(|w| w == b"end_header").unwrap()..].iter().copied())
        .collect();
    let bad = f.dir.path().join("bad.ply");
    std::fs::write(&bad, broken).unwrap();
    let (code, body) = post(&c, format!("{base}/sessions"), json!({"v":1,"scene":bad,"cameras":f.cameras})).await;
    assert_eq!(code, 422);
    assert!(body["error"]["message"].as_str().unwrap().contains("opacity"), "{body}");

    let (code, body) = post(&c, format!("{base}/sessions"), json!({"v":2,"scene":f.scene,"cameras":f.cameras})).await;
    assert_eq!((code, body["error"]["kind"].as_str()), (400, Some("version")));
    let (code, _) = post(&c, format!("{base}/sessions"), json!({"scene":"x"})).await;
    assert_eq!(code, 400);
    let r = c.get(format!("{base}/sessions/s-99")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn lifecycle_and_phase_conflicts() {
    let (stub, base, f) = stub_server().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, &f).await;
    let url = |p: &str| format!("{base}/sessions/{id}/{p}");

    // nothing downstream of loaded is available yet
    assert_eq!(c.get(url("mask/0")).send().await.unwrap().status().as_u16(), 409);
    let (code, _) = post(&c, url("transform"), json!({"v":1,"quaternion":[1,0,0,0],"translation":[0,0,0]})).await;
    assert_eq!(code, 409);
    let (code, body) = post(&c, url("persist"), json!({"v":1,"path":f.dir.path().join("p")})).await;
    assert_eq!((code, body["error"]["kind"].as_str()), (409, Some("phase_conflict")));
    let (code, _) = post(&c, url("inpaint"), json!({"v":1})).await;
    assert_eq!(code, 409);

    let (code, body) = post(&c, url("prompts"), json!({"v":1,"camera":0,"points":[]})).await;
    assert_eq!((code, body["error"]["kind"].as_str()), (400, Some("validation")));
    let (code, _) = post(&c, url("prompts"), json!({"v":1,"camera":0,"points":[{"x":99,"y":0}]})).await;
    assert_eq!(code, 400);
    let (code, _) = post(&c, url("prompts"), json!({"v":1,"camera":7,"points":[{"x":1,"y":1}]})).await;
    assert_eq!(code, 400);
    assert_eq!(status(&c, &base, &id).await.phase, Phase::Loaded);

    stub.delay_us.store(300_000, Ordering::Relaxed);
    let (code, body) = post(&c, url("prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 202);
    assert_eq!(body["phase"], "segmenting");
    let (code, _) = post(&c, url("prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 409);
    let s = wait_idle(&c, &base, &id, Duration::from_secs(10)).await;
    assert_eq!(s.phase, Phase::Segmented);
    assert_eq!(s.selected_count, Some(20));
    assert!(s.artifacts.segmentation && !s.artifacts.inpainted);

    let png = c.get(url("mask/1")).send().await.unwrap().bytes().await.unwrap();
    let mask = decode_mask_png(&png, "mask".as_ref()).unwrap();
    assert_eq!((mask.width, mask.height), (16, 16));
    assert!(mask.count() > 0);
    let r = c.get(url("mask/1?overlay=true")).send().await.unwrap();
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(c.get(url("mask/9")).send().await.unwrap().status().as_u16(), 400);

    let (code, _) = post(&c, url("inpaint"), json!({"v":1})).await;
    assert_eq!(code, 202);
    let (code, body) = post(&c, url("prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 409, "prompts during inpainting: {body}");
    assert_eq!(body["error"]["message"], "prompts is not allowed in phase inpainting");
    let s = wait_idle(&c, &base, &id, Duration::from_secs(10)).await;
    assert_eq!(s.phase, Phase::Ready);
    assert!(s.artifacts.inpainted);

    let (code, ack) = post(&c, url("transform"), json!({"v":1,"quaternion":[1,0,0,0],"translation":[0.1,0,0]})).await;
    assert_eq!(code, 200);
    let (code, ack2) = post(&c, url("camera"), json!({"v":1,"index":2})).await;
    assert_eq!(code, 200);
    assert!(ack2["seq"].as_u64() > ack["seq"].as_u64());
    assert_eq!(status(&c, &base, &id).await.active_camera, Some(2));
    let (code, _) = post(&c, url("object"), json!({"v":1,"visible":false})).await;
    assert_eq!(code, 200);
    for bad in [json!({"v":1,"quaternion":[0,0,0,0],"translation":[0,0,0]}), json!({"v":1,"quaternion":[1,0,0],"translation":[0,0,0]}), json!({"v":1})] {
        let (code, body) = post(&c, url("transform"), bad).await;
        assert_eq!((code, body["error"]["kind"].as_str()), (400, Some("validation")));
    }
    let r = c.post(url("transform")).body("{not json").send().await.unwrap();
    assert_eq!(r.status().as_u16(), 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_job_enters_error_phase() {
    let (stub, base, f) = stub_server().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, &f).await;
    stub.fail_segment.store(true, Ordering::Relaxed);
    let (code, _) = post(&c, format!("{base}/sessions/{id}/prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 202);
    let s = wait_idle(&c, &base, &id, Duration::from_secs(10)).await;
    assert_eq!(s.phase, Phase::Error);
    assert!(s.error.is_some());
    assert!(!s.artifacts.segmentation);
    let (code, _) = post(&c, format!("{base}/sessions/{id}/prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_inpaint_body_is_accepted() {
    let (_, base, f) = stub_server().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, &f).await;
    let (code, _) = post(&c, format!("{base}/sessions/{id}/prompts"), json!({"v":1,"camera":0,"points":[{"x":8,"y":8}]})).await;
    assert_eq!(code, 202);
    wait_idle(&c, &base, &id, Duration::from_secs(10)).await;
    let r = c.post(format!("{base}/sessions/{id}/inpaint")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 202);
    assert_eq!(wait_idle(&c, &base, &id, Duration::from_secs(10)).await.phase, Phase::Ready);
    let (code, _) = post(&c, format!("{base}/sessions/{id}/inpaint"), json!({"v":1})).await;
    assert_eq!(code, 409);
}
