//! Sessions and their phase machine. Control calls never block on a job:
//! jobs run on their own thread and publish results under the session lock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use splatedit_core::editing::{EditSession, RigidTransform};
use splatedit_core::imaging::{encode_image_png, encode_mask_png, Image2D, Mask2D};
use splatedit_core::inpainting::InpaintView;
use splatedit_core::renderer::{render, Channels};
use splatedit_core::scene::{load_cameras, load_ply, Camera};
use splatedit_core::segmentation::render_selection_mask;
use splatedit_core::synth::LabelFile;
use splatedit_core::{Camera32, Scene32};
use tokio::sync::watch;

use crate::api::{Ack, Artifacts, CameraRequest, CreateSessionRequest, JobAccepted, JobKind, PromptRequest, SessionCreated, SessionStatus, TransformRequest, API_VERSION};
use crate::error::{check_version, ServiceError, ServiceResult};
use crate::frames::FrameState;
use crate::phase::Phase;
use crate::pipeline::{InpaintJob, Pipeline, SegmentJob};

#[derive(Clone, Debug)]
pub struct SegArtifacts {
    pub selected: Vec<usize>,
    pub object: Arc<Scene32>,
    pub background: Arc<Scene32>,
    pub masks: Vec<Option<Mask2D>>,
    pub prompt_camera: usize,
}

#[derive(Clone, Debug)]
pub struct InpaintArtifacts {
    pub background: Arc<Scene32>,
    pub views: Vec<(usize, InpaintView<f32>)>,
}

pub(crate) struct State {
    pub phase: Phase,
    pub progress: f64,
    pub job_running: bool,
    pub error: Option<String>,
    pub original: Arc<Scene32>,
    pub cameras: Arc<Vec<Camera32>>,
    pub labels: Option<Arc<Vec<u32>>>,
    pub seg: Option<SegArtifacts>,
    pub inpainted: Option<InpaintArtifacts>,
    pub edit: Option<EditSession<f32>>,
    /// Active camera and its index in `cameras`, if it is one of them.
    pub camera: (Option<usize>, Camera32),
    pub seq: u64,
}

impl State {
    pub(crate) fn new(original: Scene32, cameras: Vec<Camera32>, labels: Option<Vec<u32>>) -> Self {
        let camera = cameras[0].clone();
        Self {
            phase: Phase::Loaded,
            progress: 0.0,
            job_running: false,
            error: None,
            original: Arc::new(original),
            cameras: Arc::new(cameras),
            labels: labels.map(Arc::new),
            seg: None,
            inpainted: None,
            edit: None,
            camera: (Some(0), camera),
            seq: 0,
        }
    }

    fn frame_state(&mut self) -> FrameState {
        let scene = match (&mut self.edit, self.phase) {
            (Some(e), Phase::Ready) => e.composite().ok(),
            _ => None,
        };
        FrameState {
            seq: self.seq,
            scene,
            camera: self.camera.1.clone(),
        }
    }
}

pub struct Session {
    pub id: String,
    state: Mutex<State>,
    idle: Condvar,
    frames: watch::Sender<FrameState>,
}

impl Session {
    pub(crate) fn new(id: String, mut state: State) -> Self {
        let (frames, _) = watch::channel(state.frame_state());
        Self {
            id,
            state: Mutex::new(state),
            idle: Condvar::new(),
            frames,
        }
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Bumps the edit sequence and publishes a new frame state. Called with
    /// the state lock held so sequence order and publish order agree.
    fn publish(&self, st: &mut State) -> u64 {
        st.seq += 1;
        let fs = st.frame_state();
        self.frames.send_replace(fs);
        st.seq
    }

    pub fn subscribe(&self) -> watch::Receiver<FrameState> {
        self.frames.subscribe()
    }

    pub fn current_frame(&self) -> FrameState {
        self.frames.borrow().clone()
    }

    pub fn status(&self) -> SessionStatus {
        let st = self.lock();
        SessionStatus {
            v: API_VERSION,
            id: self.id.clone(),
            phase: st.phase,
            progress: st.progress,
            job_running: st.job_running,
            artifacts: Artifacts {
                original: true,
                segmentation: st.seg.is_some(),
                inpainted: st.inpainted.is_some(),
            },
            splat_count: st.original.len(),
            camera_count: st.cameras.len(),
            selected_count: st.seg.as_ref().map(|s| s.selected.len()),
            active_camera: st.camera.0,
            seq: st.seq,
            error: st.error.clone(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.lock().phase
    }

    /// Waits until no job runs; false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let st = self.lock();
        let (st, res) = self.idle.wait_timeout_while(st, timeout, |s| s.job_running).unwrap_or_else(|p| p.into_inner());
        drop(st);
        !res.timed_out()
    }

    pub fn segmentation(&self) -> Option<SegArtifacts> {
        self.lock().seg.clone()
    }

    pub fn inpainted(&self) -> Option<InpaintArtifacts> {
        self.lock().inpainted.clone()
    }

    fn finish(&self, st: &mut State) {
        st.job_running = false;
        self.idle.notify_all();
    }

    fn fail(&self, st: &mut State, message: String) {
        log::warn!("session {} failed: {message}", self.id);
        st.phase = Phase::Error;
        st.error = Some(message);
        self.finish(st);
    }
}

pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    pipeline: Arc<dyn Pipeline>,
}

fn conflict(op: &'static str, phase: Phase) -> ServiceError {
    ServiceError::PhaseConflict { op, phase }
}

impl SessionManager {
    pub fn new(pipeline: Arc<dyn Pipeline>) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            pipeline,
        }
    }

    pub(crate) fn insert(&self, state: State) -> Arc<Session> {
        let id = format!("s-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Arc::new(Session::new(id.clone(), state));
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id, session.clone());
        session
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    pub fn create_from_files(&self, req: &CreateSessionRequest) -> ServiceResult<SessionCreated> {
        check_version(req.v)?;
        for p in [Some(&req.scene), Some(&req.cameras), req.labels.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(ServiceError::FileNotFound(p.clone()));
            }
        }
        let scene: Scene32 = load_ply(&req.scene).map_err(ServiceError::from_load)?;
        let cameras: Vec<Camera32> = load_cameras(&req.cameras).map_err(ServiceError::from_load)?;
        let labels = match &req.labels {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Validation(format!("{}: {e}", p.display())))?;
                let lf: LabelFile = serde_json::from_str(&text).map_err(|e| ServiceError::Validation(format!("{}: {e}", p.display())))?;
                Some(lf.labels)
            }
            None => None,
        };
        let s = self.create(scene, cameras, labels)?;
        Ok(SessionCreated {
            v: API_VERSION,
            id: s.id.clone(),
            phase: Phase::Loaded,
        })
    }

    pub fn create(&self, scene: Scene32, cameras: Vec<Camera32>, labels: Option<Vec<u32>>) -> ServiceResult<Arc<Session>> {
        scene.validate()?;
        if cameras.is_empty() {
            return Err(ServiceError::Validation("camera list is empty".into()));
        }
        if let Some(l) = &labels {
            if l.len() != scene.len() {
                return Err(ServiceError::Validation(format!("{} labels for {} splats", l.len(), scene.len())));
            }
        }
        Ok(self.insert(State::new(scene, cameras, labels)))
    }

    pub fn status(&self, id: &str) -> ServiceResult<SessionStatus> {
        Ok(self.get(id)?.status())
    }

    pub fn submit_prompts(&self, id: &str, req: &PromptRequest) -> ServiceResult<JobAccepted> {
        check_version(req.v)?;
        let session = self.get(id)?;
        let mut st = session.lock();
        if st.job_running {
            return Err(conflict("prompts", st.phase));
        }
        if st.phase != Phase::Loaded {
            return Err(conflict("prompts", st.phase));
        }
        if req.points.is_empty() {
            return Err(ServiceError::Validation("prompt list is empty".into()));
        }
        let cam = st.cameras.get(req.camera).ok_or_else(|| ServiceError::Validation(format!("camera {} out of range", req.camera)))?;
        for p in &req.points {
            p.check_bounds(cam.width, cam.height).map_err(|e| ServiceError::Validation(e.to_string()))?;
        }
        let job = SegmentJob {
            scene: st.original.clone(),
            cameras: st.cameras.clone(),
            labels: st.labels.clone(),
            camera: req.camera,
            prompts: req.points.clone(),
        };
        st.phase = Phase::Segmenting;
        st.progress = 0.0;
        st.job_running = true;
        st.error = None;
        drop(st);
        let pipeline = self.pipeline.clone();
        let s = session.clone();
        std::thread::spawn(move || {
            let p = s.clone();
            let result = pipeline.segment(&job, &mut |f| p.lock().progress = f.clamp(0.0, 1.0));
            let mut st = s.lock();
            match result {
                Ok(out) if out.selected.is_empty() => s.fail(&mut st, "segmentation selected nothing".into()),
                Ok(out) if out.selected.iter().any(|&i| i >= job.scene.len()) => s.fail(&mut st, "segmentation returned an out-of-range index".into()),
                Ok(out) => {
                    let mut selected = out.selected;
                    selected.sort_unstable();
                    selected.dedup();
                    let mut is_sel = vec![false; job.scene.len()];
                    selected.iter().for_each(|&i| is_sel[i] = true);
                    let rest: Vec<usize> = (0..job.scene.len()).filter(|&i| !is_sel[i]).collect();
                    st.seg = Some(SegArtifacts {
                        object: Arc::new(job.scene.subset(&selected)),
                        background: Arc::new(job.scene.subset(&rest)),
                        selected,
                        masks: out.masks,
                        prompt_camera: job.camera,
                    });
                    st.phase = Phase::Segmented;
                    st.progress = 1.0;
                    s.finish(&mut st);
                }
                Err(e) => s.fail(&mut st, e.to_string()),
            }
        });
        Ok(JobAccepted {
            v: API_VERSION,
            id: id.to_string(),
            job: JobKind::Segment,
            phase: Phase::Segmenting,
        })
    }

    pub fn run_inpaint(&self, id: &str, v: u32) -> ServiceResult<JobAccepted> {
        check_version(v)?;
        let session = self.get(id)?;
        let mut st = session.lock();
        if st.phase != Phase::Segmented || st.job_running {
            return Err(conflict("inpaint", st.phase));
        }
        let seg = st.seg.clone().expect("segmented phase carries a segmentation");
        let job = InpaintJob {
            scene: st.original.clone(),
            cameras: st.cameras.clone(),
            selected: seg.selected.clone(),
            reference_view: seg.prompt_camera,
        };
        st.phase = Phase::Inpainting;
        st.progress = 0.0;
        st.job_running = true;
        drop(st);
        let pipeline = self.pipeline.clone();
        let s = session.clone();
        std::thread::spawn(move || {
            let p = s.clone();
            let result = pipeline.inpaint(&job, &mut |f| p.lock().progress = f.clamp(0.0, 1.0));
            let mut st = s.lock();
            match result.and_then(|out| {
                let edit = EditSession::new(out.background.clone(), (*seg.object).clone())?;
                Ok((out, edit))
            }) {
                Ok((out, edit)) => {
                    st.inpainted = Some(InpaintArtifacts {
                        background: Arc::new(out.background),
                        views: out.views,
                    });
                    st.edit = Some(edit);
                    st.phase = Phase::Ready;
                    st.progress = 1.0;
                    s.publish(&mut st);
                    s.finish(&mut st);
                }
                Err(e) => s.fail(&mut st, e.to_string()),
            }
        });
        Ok(JobAccepted {
            v: API_VERSION,
            id: id.to_string(),
            job: JobKind::Inpaint,
            phase: Phase::Inpainting,
        })
    }

    /// Binary mask of the selection seen from camera `cam`, or the camera's
    /// render with the mask tinted red when `overlay` is set. PNG bytes.
    pub fn mask_preview(&self, id: &str, cam: usize, overlay: bool) -> ServiceResult<Vec<u8>> {
        let session = self.get(id)?;
        let (scene, cameras, selected) = {
            let st = session.lock();
            if !st.phase.has_segmentation() {
                return Err(conflict("mask preview", st.phase));
            }
            let seg = st.seg.as_ref().expect("segmentation present");
            (st.original.clone(), st.cameras.clone(), seg.selected.clone())
        };
        let camera = cameras.get(cam).ok_or_else(|| ServiceError::Validation(format!("camera {cam} out of range")))?;
        let mask = render_selection_mask(&scene, &selected, camera)?;
        if !overlay {
            return Ok(encode_mask_png(&mask)?);
        }
        let frame = render(&scene, camera, [0.0; 3], Channels::COLOR)?;
        let tinted: Vec<[f32; 3]> = frame
            .color
            .iter()
            .zip(&mask.data)
            .map(|(c, &m)| if m != 0 { [0.5 * c[0] + 0.5, 0.5 * c[1], 0.5 * c[2]] } else { *c })
            .collect();
        Ok(encode_image_png(&Image2D::new(frame.width, frame.height, tinted)?)?)
    }

    pub fn apply_transform(&self, id: &str, req: &TransformRequest) -> ServiceResult<Ack> {
        check_version(req.v)?;
        let t = RigidTransform::<f32>::from_record(&req.transform).map_err(|e| ServiceError::Validation(e.to_string()))?;
        let session = self.get(id)?;
        let mut st = session.lock();
        if st.phase != Phase::Ready {
            return Err(conflict("transform", st.phase));
        }
        st.edit.as_mut().expect("ready phase carries an edit session").set_transform(t);
        let seq = session.publish(&mut st);
        Ok(Ack { v: API_VERSION, seq })
    }

    /// Shows or hides the object in the composite.
    pub fn set_object_visible(&self, id: &str, visible: bool) -> ServiceResult<Ack> {
        let session = self.get(id)?;
        let mut st = session.lock();
        if st.phase != Phase::Ready {
            return Err(conflict("object visibility", st.phase));
        }
        let edit = st.edit.as_mut().expect("ready phase carries an edit session");
        if visible {
            edit.restore_object();
        } else {
            edit.remove_object();
        }
        let seq = session.publish(&mut st);
        Ok(Ack { v: API_VERSION, seq })
    }

    pub fn set_camera(&self, id: &str, req: &CameraRequest) -> ServiceResult<Ack> {
        check_version(req.v)?;
        let session = self.get(id)?;
        let mut st = session.lock();
        let camera = match (req.index, &req.camera) {
            (Some(i), None) => (Some(i), st.cameras.get(i).cloned().ok_or_else(|| ServiceError::Validation(format!("camera {i} out of range")))?),
            (None, Some(rec)) => (None, Camera::from_record(rec).map_err(|e| ServiceError::Validation(e.to_string()))?),
            _ => return Err(ServiceError::Validation("give exactly one of index and camera".into())),
        };
        st.camera = camera;
        let seq = session.publish(&mut st);
        Ok(Ack { v: API_VERSION, seq })
    }

    pub fn persist(&self, id: &str, dir: &Path) -> ServiceResult<crate::persist::Manifest> {
        let session = self.get(id)?;
        let st = session.lock();
        if !matches!(st.phase, Phase::Segmented | Phase::Ready) {
            return Err(conflict("persist", st.phase));
        }
        crate::persist::write_session(&st, dir)
    }

    pub fn load(&self, dir: &Path) -> ServiceResult<Arc<Session>> {
        let state = crate::persist::read_session(dir)?;
        let s = self.insert(state);
        {
            let mut st = s.lock();
            if st.phase == Phase::Ready {
                s.publish(&mut st);
            }
        }
        Ok(s)
    }

    /// Polls until the session is idle; returns its status.
    pub fn wait(&self, id: &str, timeout: Duration) -> ServiceResult<SessionStatus> {
        let s = self.get(id)?;
        let deadline = Instant::now() + timeout;
        s.wait_idle(deadline.saturating_duration_since(Instant::now()));
        Ok(s.status())
    }
}
