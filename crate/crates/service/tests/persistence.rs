use std::sync::Arc;
use std::time::Duration;

use splatedit_core::editing::TransformRecord;
use splatedit_service::api::{PromptRequest, TransformRequest, API_VERSION};
use splatedit_service::persist::{read_manifest, sha256_file};
use splatedit_service::testing::{tiny_fixture, StubPipeline};
use splatedit_service::{Phase, ServiceError, SessionManager};
use splatedit_core::segmentation::PromptPoint;

fn manager() -> SessionManager {
    SessionManager::new(Arc::new(StubPipeline::default()))
}

fn segmented(m: &SessionManager) -> String {
    let (scene, cams, labels) = tiny_fixture();
    let s = m.create(scene, cams, Some(labels)).unwrap();
    m.submit_prompts(&s.id, &PromptRequest { v: API_VERSION, camera: 0, points: vec![PromptPoint::positive(8, 8)] }).unwrap();
    assert_eq!(m.wait(&s.id, Duration::from_secs(10)).unwrap().phase, Phase::Segmented);
    s.id.clone()
}

fn ready(m: &SessionManager) -> String {
    let id = segmented(m);
    m.run_inpaint(&id, API_VERSION).unwrap();
    assert_eq!(m.wait(&id, Duration::from_secs(10)).unwrap().phase, Phase::Ready);
    id
}

#[test]
fn round_trip_keeps_phase_and_checksums() {
    let m = manager();
    let tmp = tempfile::tempdir().unwrap();
    for id in [segmented(&m), ready(&m)] {
        if m.status(&id).unwrap().phase == Phase::Ready {
            let t = TransformRecord { quaternion: [0.9, 0.1, 0.0, 0.2], translation: [0.1, 0.2, 0.3], scale: None };
            m.apply_transform(&id, &TransformRequest { v: API_VERSION, transform: t }).unwrap();
            m.set_object_visible(&id, false).unwrap();
        }
        let a = tmp.path().join(format!("{id}-a"));
        let b = tmp.path().join(format!("{id}-b"));
        let first = m.persist(&id, &a).unwrap();
        for (rel, digest) in &first.files {
            assert_eq!(&sha256_file(&a.join(rel)).unwrap(), digest);
        }
        let loaded = m.load(&a).unwrap();
        assert_eq!(loaded.phase(), first.phase);
        let second = m.persist(&loaded.id, &b).unwrap();
        assert_eq!(second, first);
        assert_eq!(read_manifest(&b).unwrap(), first);
        let (orig, back) = (m.get(&id).unwrap().status(), loaded.status());
        assert_eq!((orig.selected_count, orig.splat_count, orig.artifacts), (back.selected_count, back.splat_count, back.artifacts));
        if first.phase == Phase::Ready {
            let (x, y) = (m.get(&id).unwrap().current_frame(), loaded.current_frame());
            assert_eq!(x.scene.unwrap().as_ref(), y.scene.unwrap().as_ref());
            assert!(!first.object_visible);
        }
    }
}

#[test]
fn unknown_version_is_rejected() {
    let m = manager();
    let id = segmented(&m);
    let dir = tempfile::tempdir().unwrap();
    m.persist(&id, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    v["v"] = 7.into();
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    match m.load(dir.path()) {
        Err(ServiceError::Version { found: 7, expected: 1 }) => {}
        other => panic!("{:?}", other.map(|s| s.id.clone())),
    }
}

#[test]
fn tampered_file_fails_checksum() {
    let m = manager();
    let id = ready(&m);
    let dir = tempfile::tempdir().unwrap();
    m.persist(&id, dir.path()).unwrap();
    let f = dir.path().join("object.ply");
    let mut bytes = std::fs::read(&f).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    std::fs::write(&f, bytes).unwrap();
    match m.load(dir.path()) {
        Err(ServiceError::Checksum(rel)) => assert_eq!(rel, "object.ply"),
        other => panic!("{:?}", other.map(|s| s.id.clone())),
    }
}

#[test]
fn persist_guards() {
    let m = manager();
    let (scene, cams, labels) = tiny_fixture();
    let s = m.create(scene, cams, Some(labels)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(m.persist(&s.id, dir.path()), Err(ServiceError::PhaseConflict { phase: Phase::Loaded, .. })));

    let id = segmented(&m);
    std::fs::write(dir.path().join("precious.txt"), "keep").unwrap();
    assert!(matches!(m.persist(&id, dir.path()), Err(ServiceError::Validation(_))));
    assert!(dir.path().join("precious.txt").exists());
    assert!(matches!(m.load(&dir.path().join("missing")), Err(ServiceError::FileNotFound(_))));
}
