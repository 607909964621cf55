use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use splatedit_core::imaging::mask_metrics;
use splatedit_core::math::Vec3;
use splatedit_core::segmentation::{render_selection_mask, segment, GroundTruthOracle, PromptPoint, SegmentationConfig};
use splatedit_core::synth::{generate, Primitive, SynthScene, SynthSpec};

fn iou(a: &[usize], b: &[usize]) -> f64 {
    let sa: BTreeSet<_> = a.iter().collect();
    let sb: BTreeSet<_> = b.iter().collect();
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

/// Prompt on the projected sphere centre in view 0.
fn prompt(fx: &SynthScene<f32>) -> PromptPoint {
    let cam = &fx.cameras[0];
    let c = cam.world_to_camera(Vec3::new(0.0, 0.0, 0.75));
    PromptPoint::positive((cam.fx * c.x / c.z + cam.cx) as usize, (cam.fy * c.y / c.z + cam.cy) as usize)
}

fn run(fx: &SynthScene<f32>, config: &SegmentationConfig) -> Vec<usize> {
    let mut scene = fx.scene.clone();
    let mut oracle = GroundTruthOracle::new(&scene, fx.labels.clone()).unwrap();
    segment(&mut scene, &fx.cameras, 0, &[prompt(fx)], &mut oracle, config).unwrap().0.selected
}

#[test]
fn sphere_on_plane_selection() {
    let fx = generate::<f32>(&SynthSpec::sphere_on_plane(3, 12, 96)).unwrap();
    assert!((4500..5500).contains(&fx.scene.len()));
    let t = Instant::now();
    let selected = run(&fx, &SegmentationConfig::default());
    assert!(t.elapsed() < Duration::from_secs(300));
    let truth = fx.target_indices();
    let iou3 = iou(&selected, &truth);
    assert!(iou3 >= 0.90, "3D IoU {iou3}");

    let mut oracle = GroundTruthOracle::new(&fx.scene, fx.labels.clone()).unwrap();
    let (mut acc, mut ious) = (0.0, 0.0);
    for cam in &fx.cameras {
        let pred = render_selection_mask(&fx.scene, &selected, cam).unwrap();
        let gt = oracle.mask_of(cam, &fx.target_labels).unwrap();
        let m = mask_metrics(&pred, &gt).unwrap();
        acc += m.accuracy;
        ious += m.iou;
    }
    let n = fx.cameras.len() as f64;
    assert!(acc / n >= 0.99, "2D accuracy {}", acc / n);
    assert!(ious / n >= 0.90, "2D IoU {}", ious / n);
}

#[test]
fn fine_stage_recovers_occluded_interior() {
    let mut spec = SynthSpec::sphere_on_plane(5, 12, 96);
    let Primitive::Sphere { interior_count, .. } = &mut spec.objects[1].shape else { unreachable!() };
    *interior_count = 600;
    let fx = generate::<f32>(&spec).unwrap();
    let truth = fx.target_indices();
    let with = iou(&run(&fx, &SegmentationConfig::default()), &truth);
    let without = iou(&run(&fx, &SegmentationConfig { fine_stage: false, ..Default::default() }), &truth);
    assert!(with > without, "fine {with} vs coarse only {without}");
}
