//! A stub pipeline and a randomized phase-machine exerciser, shared by the
//! integration tests and the acceptance suite.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatedit_core::editing::TransformRecord;
use splatedit_core::math::Vec3;
use splatedit_core::scene::{Camera, Splat, SplatScene};
use splatedit_core::segmentation::PromptPoint;
use splatedit_core::{Camera32, Error, Result, Scene32};

use crate::api::{CameraRequest, FrameFormat, PromptRequest, TransformRequest, API_VERSION};
use crate::error::ServiceError;
use crate::frames::render_frame;
use crate::phase::Phase;
use crate::pipeline::{InpaintJob, InpaintOutput, Pipeline, SegmentJob, SegmentOutput};
use crate::session::SessionManager;

/// Selects splats labelled 1 (or the first third without labels) and
/// "inpaints" by dropping them. Delay and failures are switchable.
#[derive(Default)]
pub struct StubPipeline {
    pub delay_us: AtomicU64,
    pub fail_segment: AtomicBool,
    pub fail_inpaint: AtomicBool,
}

impl StubPipeline {
    fn pause(&self) {
        let us = self.delay_us.load(Ordering::Relaxed);
        if us > 0 {
            std::thread::sleep(Duration::from_micros(us));
        }
    }
}

impl Pipeline for StubPipeline {
    fn segment(&self, job: &SegmentJob, progress: &mut dyn FnMut(f64)) -> Result<SegmentOutput> {
        progress(0.5);
        self.pause();
        if self.fail_segment.load(Ordering::Relaxed) {
            return Err(Error::NoPropagation);
        }
        let selected = match &job.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == 1).collect(),
            None => (0..job.scene.len() / 3).collect(),
        };
        Ok(SegmentOutput {
            selected,
            masks: vec![None; job.cameras.len()],
        })
    }

    fn inpaint(&self, job: &InpaintJob, progress: &mut dyn FnMut(f64)) -> Result<InpaintOutput> {
        progress(0.5);
        self.pause();
        if self.fail_inpaint.load(Ordering::Relaxed) {
            return Err(Error::Diverged { step: 0 });
        }
        let rest: Vec<usize> = (0..job.scene.len()).filter(|i| job.selected.binary_search(i).is_err()).collect();
        Ok(InpaintOutput {
            background: job.scene.subset(&rest),
            views: Vec::new(),
        })
    }
}

/// 40 background splats on a plane, 20 labelled object splats above it,
/// three 16×16 cameras.
pub fn tiny_fixture() -> (Scene32, Vec<Camera32>, Vec<u32>) {
    let mut splats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let (x, y) = ((i % 8) as f32 * 0.25 - 0.9, (i / 8) as f32 * 0.25 - 0.5);
        splats.push(Splat::isotropic(Vec3::new(x, y, 0.0), 0.12, 0.8, [0.2, 0.5, 0.3]));
        labels.push(0);
    }
    for i in 0..20 {
        let a = i as f32 * 0.314;
        splats.push(Splat::isotropic(Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), 0.3), 0.08, 0.9, [0.9, 0.2, 0.1]));
        labels.push(1);
    }
    let scene = SplatScene::from_splats(splats, 0).expect("valid splats");
    let cameras = (0..3)
        .map(|k| {
            let a = k as f32 * 2.1;
            Camera::look_at(Vec3::new(2.0 * a.cos(), 2.0 * a.sin(), 1.2), Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.0, 0.0, 1.0), 16, 16, 1.0).expect("valid camera")
        })
        .collect();
    (scene, cameras, labels)
}

#[derive(Clone, Debug, Default)]
pub struct FuzzReport {
    pub sequences: usize,
    pub operations: usize,
    pub frames: usize,
    pub phases_seen: Vec<Phase>,
    pub violations: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Prompts { valid: bool },
    Inpaint,
    Transform,
    Camera,
    Visibility,
    Mask,
    Persist,
    Wait,
    Status,
    Failures,
}

fn allowed(op: Op, phase: Phase) -> bool {
    match op {
        Op::Prompts { .. } => phase == Phase::Loaded,
        Op::Inpaint => phase == Phase::Segmented,
        Op::Transform | Op::Visibility => phase == Phase::Ready,
        Op::Mask => phase.has_segmentation(),
        Op::Persist => matches!(phase, Phase::Segmented | Phase::Ready),
        Op::Camera | Op::Wait | Op::Status | Op::Failures => true,
    }
}

/// Some phase on a legal path from `before` to `after` satisfies `pred`.
fn on_path(before: Phase, after: Phase, pred: impl Fn(Phase) -> bool) -> bool {
    Phase::ALL.iter().any(|&x| before.reaches(x) && x.reaches(after) && pred(x))
}

/// Runs `sequences` random operation sequences against fresh sessions and
/// records every forbidden phase transition, phase/artifact mismatch,
/// operation accepted in a forbidding phase, and non-increasing frame
/// sequence number.
pub fn fuzz_phase_machine(sequences: usize, ops_per_sequence: usize, seed: u64, scratch: &Path) -> FuzzReport {
    let stub = Arc::new(StubPipeline::default());
    let manager = SessionManager::new(stub.clone());
    let (scene, cameras, labels) = tiny_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    for s in 0..sequences {
        stub.fail_segment.store(rng.gen_bool(0.1), Ordering::Relaxed);
        stub.fail_inpaint.store(rng.gen_bool(0.1), Ordering::Relaxed);
        stub.delay_us.store(rng.gen_range(0..2000), Ordering::Relaxed);
        let session = match manager.create(scene.clone(), cameras.clone(), Some(labels.clone())) {
            Ok(x) => x,
            Err(e) => {
                report.violations.push(format!("seq {s}: create failed: {e}"));
                continue;
            }
        };
        let id = session.id.clone();
        let mut rx = session.subscribe();
        let mut last_frame_seq = rx.borrow_and_update().seq;
        let mut last_ack = 0u64;
        let mut prev = session.status().phase;
        let mut fail = |msg: String| report.violations.push(format!("seq {s} ({id}): {msg}"));
        for _ in 0..ops_per_sequence {
            let op = match rng.gen_range(0..20) {
                0..=3 => Op::Prompts { valid: rng.gen_bool(0.8) },
                4..=6 => Op::Inpaint,
                7..=9 => Op::Transform,
                10 => Op::Camera,
                11 => Op::Visibility,
                12 => Op::Mask,
                13 => Op::Persist,
                14..=16 => Op::Wait,
                17..=18 => Op::Status,
                _ => Op::Failures,
            };
            let before = session.status().phase;
            if !prev.reaches(before) {
                fail(format!("observed {prev} then {before}"));
            }
            let result: std::result::Result<Option<u64>, ServiceError> = match op {
                Op::Prompts { valid } => {
                    let cam = rng.gen_range(0..cameras.len());
                    let points = if valid { vec![PromptPoint::positive(rng.gen_range(0..16), rng.gen_range(0..16))] } else { Vec::new() };
                    manager.submit_prompts(&id, &PromptRequest { v: API_VERSION, camera: cam, points }).map(|_| None)
                }
                Op::Inpaint => manager.run_inpaint(&id, API_VERSION).map(|_| None),
                Op::Transform => {
                    let t = TransformRecord {
                        quaternion: [1.0, rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                        translation: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0],
                        scale: None,
                    };
                    manager.apply_transform(&id, &TransformRequest { v: API_VERSION, transform: t }).map(|a| Some(a.seq))
                }
                Op::Camera => manager
                    .set_camera(
                        &id,
                        &CameraRequest {
                            v: API_VERSION,
                            index: Some(rng.gen_range(0..cameras.len())),
                            camera: None,
                        },
                    )
                    .map(|a| Some(a.seq)),
                Op::Visibility => manager.set_object_visible(&id, rng.gen_bool(0.5)).map(|a| Some(a.seq)),
                Op::Mask => manager.mask_preview(&id, rng.gen_range(0..cameras.len()), false).map(|_| None),
                Op::Persist => {
                    let dir = scratch.join(format!("fuzz_{s}"));
                    let r = manager.persist(&id, &dir);
                    if let Ok(m) = &r {
                        if rng.gen_bool(0.3) {
                            match manager.load(&dir) {
                                Ok(loaded) if loaded.phase() != m.phase => fail(format!("reloaded phase {} != {}", loaded.phase(), m.phase)),
                                Ok(_) => {}
                                Err(e) => fail(format!("reload failed: {e}")),
                            }
                        }
                    }
                    r.map(|_| None)
                }
                Op::Wait => {
                    session.wait_idle(Duration::from_secs(10));
                    Ok(None)
                }
                Op::Status => Ok(None),
                Op::Failures => {
                    stub.fail_segment.store(rng.gen_bool(0.2), Ordering::Relaxed);
                    stub.fail_inpaint.store(rng.gen_bool(0.2), Ordering::Relaxed);
                    Ok(None)
                }
            };
            report.operations += 1;
            let st = session.status();
            let after = st.phase;
            if !before.reaches(after) {
                fail(format!("{op:?}: phase {before} then {after}"));
            }
            match &result {
                Ok(_) => {
                    if !on_path(before, after, |x| allowed(op, x)) {
                        fail(format!("{op:?} accepted between {before} and {after}"));
                    }
                    if let Op::Prompts { valid: false } = op {
                        fail("empty prompt list accepted".into());
                    }
                    match op {
                        Op::Prompts { .. } if !matches!(after, Phase::Segmenting | Phase::Segmented | Phase::Error) => fail(format!("prompts left phase {after}")),
                        Op::Inpaint if !matches!(after, Phase::Inpainting | Phase::Ready | Phase::Error) => fail(format!("inpaint left phase {after}")),
                        _ => {}
                    }
                }
                Err(ServiceError::PhaseConflict { phase, .. }) => {
                    if allowed(op, *phase) && !st.job_running {
                        fail(format!("{op:?} rejected in permitting phase {phase}"));
                    }
                    if !(before.reaches(*phase) && phase.reaches(after)) {
                        fail(format!("{op:?} reported phase {phase} outside {before}..{after}"));
                    }
                }
                Err(ServiceError::Validation(_)) if matches!(op, Op::Prompts { valid: false }) => {}
                Err(e) => fail(format!("{op:?}: unexpected error {e}")),
            }
            if let Ok(Some(seq)) = result {
                if seq <= last_ack {
                    fail(format!("ack sequence {seq} after {last_ack}"));
                }
                last_ack = seq;
            }
            // artifacts exist exactly for the phases that produce them
            let a = st.artifacts;
            let seg_expected = after.has_segmentation();
            if after != Phase::Error && (a.segmentation != seg_expected || a.inpainted != (after == Phase::Ready)) {
                fail(format!("artifacts {a:?} in phase {after}"));
            }
            if after == Phase::Error && a.inpainted {
                fail("inpainted artifacts in error phase".into());
            }
            if rx.has_changed().unwrap_or(false) {
                let frame = rx.borrow_and_update().clone();
                report.frames += 1;
                if frame.seq <= last_frame_seq {
                    fail(format!("frame sequence {} after {}", frame.seq, last_frame_seq));
                }
                if frame.seq < last_ack {
                    fail(format!("frame {} older than acknowledged edit {}", frame.seq, last_ack));
                }
                last_frame_seq = frame.seq;
                if frame.scene.is_some() && after != Phase::Ready {
                    fail(format!("composite frame published in phase {after}"));
                }
                if frame.scene.is_some() && rng.gen_bool(0.1) {
                    match render_frame(&frame, FrameFormat::Rgb8) {
                        Ok(Some((h, payload))) if h.seq != frame.seq || payload.len() != 16 * 16 * 3 => fail("frame header does not match its state".into()),
                        Ok(_) => {}
                        Err(e) => fail(format!("frame render failed: {e}")),
                    }
                }
            }
            if !report.phases_seen.contains(&after) {
                report.phases_seen.push(after);
            }
            prev = after;
        }
        session.wait_idle(Duration::from_secs(10));
        report.sequences += 1;
    }
    report
}
