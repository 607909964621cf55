#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use splatedit_core::scene::{save_cameras, save_ply};
use splatedit_core::synth::LabelFile;
use splatedit_core::{Camera32, Scene32};
use splatedit_service::api::SessionStatus;
use splatedit_service::server::serve;
use splatedit_service::{Phase, SessionManager};
use tempfile::TempDir;

pub struct Files {
    pub dir: TempDir,
    pub scene: PathBuf,
    pub cameras: PathBuf,
    pub labels: PathBuf,
}

pub fn write_files(scene: &Scene32, cameras: &[Camera32], labels: &[u32]) -> Files {
    let dir = tempfile::tempdir().unwrap();
    let (s, c, l) = (dir.path().join("scene.ply"), dir.path().join("cameras.json"), dir.path().join("labels.json"));
    save_ply(scene, &s).unwrap();
    save_cameras(cameras, &c).unwrap();
    let lf = LabelFile {
        v: 1,
        labels: labels.to_vec(),
        target_labels: vec![1],
    };
    std::fs::write(&l, serde_json::to_vec(&lf).unwrap()).unwrap();
    Files { dir, scene: s, cameras: c, labels: l }
}

/// Serves `manager` on an ephemeral port; returns `http://addr`.
pub async fn start(manager: Arc<SessionManager>) -> String {
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(async move {
        serve(manager, "127.0.0.1:0".parse().unwrap(), move |a| {
            tx.send(a).unwrap();
        })
        .await
        .unwrap();
    });
    format!("http://{}", rx.await.unwrap())
}

pub async fn post(client: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = client.post(url).json(&body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

pub async fn status(client: &reqwest::Client, base: &str, id: &str) -> SessionStatus {
    client.get(format!("{base}/sessions/{id}")).send().await.unwrap().json().await.unwrap()
}

pub async fn wait_idle(client: &reqwest::Client, base: &str, id: &str, timeout: Duration) -> SessionStatus {
    let deadline = Instant::now() + timeout;
    loop {
        let s = status(client, base, id).await;
        if !s.job_running || Instant::now() > deadline {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub async fn drive_to_ready(client: &reqwest::Client, base: &str, id: &str) {
    let (code, _) = post(client, format!("{base}/sessions/{id}/prompts"), serde_json::json!({"v":1,"camera":0,"points":[{"x":8,"y":8,"positive":true}]})).await;
    assert_eq!(code, 202);
    assert_eq!(wait_idle(client, base, id, Duration::from_secs(60)).await.phase, Phase::Segmented);
    let (code, _) = post(client, format!("{base}/sessions/{id}/inpaint"), serde_json::json!({"v":1})).await;
    assert_eq!(code, 202);
    assert_eq!(wait_idle(client, base, id, Duration::from_secs(120)).await.phase, Phase::Ready);
}
