use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use splatedit_core::imaging::read_depth_pfm;
use splatedit_core::math::Vec3;
use splatedit_core::scene::{load_cameras, load_ply};
use splatedit_core::synth::LabelFile;
use splatedit_core::{Camera32, Scene32};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatedit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_labelled_and_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["synth", "--preset", "sphere-on-plane", "--views", "12", "--width", "32", "--seed", "4", "--out", p(&a)]);
    ok(&["synth", "--preset", "sphere-on-plane", "--views", "12", "--width", "32", "--seed", "4", "--out", p(&b)]);
    for f in ["scene.ply", "empty.ply", "cameras.json", "labels.json", "spec.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let labels: LabelFile = serde_json::from_slice(&std::fs::read(a.join("labels.json")).unwrap()).unwrap();
    assert_eq!(labels.target_labels, vec![1]);
    assert_eq!(labels.labels.iter().filter(|&&l| l == 1).count(), 2000);
    let scene: Scene32 = load_ply(a.join("scene.ply")).unwrap();
    assert_eq!(scene.len(), labels.labels.len());
    assert_eq!(load_cameras::<f32>(a.join("cameras.json")).unwrap().len(), 12);

    let mut spec: Value = serde_json::from_slice(&std::fs::read(a.join("spec.json")).unwrap()).unwrap();
    spec["cameras"]["count"] = 0.into();
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, spec.to_string()).unwrap();
    let out = run(&["synth", "--spec", p(&bad), "--out", p(&t.path().join("c"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one camera"));
}

#[test]
fn segment_inpaint_render_edit_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let fx = t.path().join("fx");
    ok(&["synth", "--views", "6", "--width", "96", "--seed", "2", "--out", p(&fx)]);
    let cams: Vec<Camera32> = load_cameras(fx.join("cameras.json")).unwrap();
    let c = cams[0].world_to_camera(Vec3::new(0.0, 0.0, 0.75));
    let point = format!("{},{}", (cams[0].fx * c.x / c.z + cams[0].cx) as usize, (cams[0].fy * c.y / c.z + cams[0].cy) as usize);

    let session = t.path().join("session");
    ok(&[
        "segment", "--scene", p(&fx.join("scene.ply")), "--cameras", p(&fx.join("cameras.json")), "--labels", p(&fx.join("labels.json")),
        "--oracle", "gt", "--point", &point, "--out", p(&session),
    ]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(session.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["phase"], "segmented");
    let sel: Value = serde_json::from_slice(&std::fs::read(session.join("selection.json")).unwrap()).unwrap();
    assert!(sel["selected"].as_array().unwrap().len() > 1500);
    assert!(session.join("masks/view_000.png").exists());

    let out = run(&["segment", "--scene", p(&fx.join("scene.ply")), "--cameras", p(&fx.join("cameras.json")), "--point", "1,1", "--out", p(&t.path().join("x"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs --labels"));

    let ready = t.path().join("ready");
    ok(&["inpaint", "--session", p(&session), "--iterations", "20", "--out", p(&ready)]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(ready.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["phase"], "ready");
    assert!(ready.join("inpainted.ply").exists());

    let depth_dir = t.path().join("depth");
    ok(&["render", "--scene", p(&ready.join("inpainted.ply")), "--cameras", p(&fx.join("cameras.json")), "--view", "2", "--channel", "depth", "--out", p(&depth_dir)]);
    let d = read_depth_pfm::<f32>(depth_dir.join("view_002.pfm")).unwrap();
    assert_eq!((d.width, d.height), (96, 96));
    assert!(d.valid_count() > 0);

    let tfile = t.path().join("t.json");
    std::fs::write(&tfile, r#"{"quaternion":[1,0,0,0],"translation":[0.5,0,0]}"#).unwrap();
    let edited = t.path().join("edited.ply");
    ok(&["edit", "--session", p(&ready), "--transform", p(&tfile), "--out", p(&edited)]);
    let inpainted: Scene32 = load_ply(ready.join("inpainted.ply")).unwrap();
    let object: Scene32 = load_ply(ready.join("object.ply")).unwrap();
    let composite: Scene32 = load_ply(&edited).unwrap();
    assert_eq!(composite.len(), inpainted.len() + object.len());
    let moved = &composite.splats[inpainted.len()..];
    for (m, o) in moved.iter().zip(&object.splats) {
        assert!((m.mean - o.mean - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-5);
    }

    let color = t.path().join("color");
    ok(&["render", "--scene", p(&edited), "--cameras", p(&fx.join("cameras.json")), "--out", p(&color)]);
    assert_eq!(std::fs::read_dir(&color).unwrap().count(), 6);
    let report: Value = serde_json::from_str(&ok(&["eval", "--rendered", p(&color), "--gt", p(&color)])).unwrap();
    assert_eq!(report["v"], 1);
    assert_eq!(report["mean"]["psnr"], 99.0);
    assert_eq!(report["views"].as_array().unwrap().len(), 6);
}
