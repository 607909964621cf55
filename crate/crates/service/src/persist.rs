//! Session directories: PLY scenes, cameras, selection, masks and
//! inpainting views, indexed by a manifest holding a SHA-256 per file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use splatedit_core::editing::{EditSession, RigidTransform, TransformRecord};
use splatedit_core::imaging::{read_mask_png, write_mask_png};
use splatedit_core::inpainting::InpaintView;
use splatedit_core::scene::{load_cameras, load_ply, save_cameras, save_ply, Camera, CameraRecord};
use splatedit_core::synth::LabelFile;
use splatedit_core::Scene32;

use crate::error::{ServiceError, ServiceResult};
use crate::phase::Phase;
use crate::session::{InpaintArtifacts, SegArtifacts, State};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub v: u32,
    pub phase: Phase,
    pub prompt_camera: usize,
    pub active_camera: Option<usize>,
    pub camera: CameraRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformRecord>,
    #[serde(default = "yes")]
    pub object_visible: bool,
    /// Relative path → SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    v: u32,
    selected: Vec<usize>,
    /// Per camera: whether an oracle mask was recorded.
    masks: Vec<bool>,
    /// Camera index of every inpainting view, in `views/view_{k}` order.
    #[serde(default)]
    view_cameras: Vec<usize>,
}

pub fn sha256_file(path: &Path) -> ServiceResult<String> {
    let bytes = std::fs::read(path).map_err(|e| ServiceError::Validation(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Validation(format!("{}: {e}", path.display()))
}

fn relative_files(root: &Path) -> ServiceResult<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| io(&d, e))? {
            let p = entry.map_err(|e| io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn write_session(st: &State, dir: &Path) -> ServiceResult<Manifest> {
    let seg = st.seg.as_ref().ok_or(ServiceError::PhaseConflict { op: "persist", phase: st.phase })?;
    if dir.exists() {
        let empty = std::fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_none();
        if !empty && !dir.join("manifest.json").exists() {
            return Err(ServiceError::Validation(format!("{} exists and is not a session directory", dir.display())));
        }
        std::fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::create_dir_all(dir.join("masks")).map_err(|e| io(dir, e))?;
    save_ply(&st.original, dir.join("original.ply"))?;
    save_cameras(&st.cameras, dir.join("cameras.json"))?;
    if let Some(l) = &st.labels {
        let lf = LabelFile {
            v: 1,
            labels: l.to_vec(),
            target_labels: Vec::new(),
        };
        std::fs::write(dir.join("labels.json"), serde_json::to_vec(&lf).map_err(splatedit_core::Error::from)?).map_err(|e| io(dir, e))?;
    }
    save_ply(&seg.object, dir.join("object.ply"))?;
    save_ply(&seg.background, dir.join("background.ply"))?;
    for (k, m) in seg.masks.iter().enumerate() {
        if let Some(m) = m {
            write_mask_png(m, dir.join("masks").join(format!("view_{k:03}.png")))?;
        }
    }
    let mut view_cameras = Vec::new();
    if let Some(inp) = &st.inpainted {
        save_ply(&inp.background, dir.join("inpainted.ply"))?;
        for (j, (k, v)) in inp.views.iter().enumerate() {
            v.save(dir.join("views").join(format!("view_{j}")))?;
            view_cameras.push(*k);
        }
    }
    let sel = SelectionFile {
        v: MANIFEST_VERSION,
        selected: seg.selected.clone(),
        masks: seg.masks.iter().map(Option::is_some).collect(),
        view_cameras,
    };
    std::fs::write(dir.join("selection.json"), serde_json::to_vec_pretty(&sel).map_err(splatedit_core::Error::from)?).map_err(|e| io(dir, e))?;

    let mut files = BTreeMap::new();
    for rel in relative_files(dir)? {
        let digest = sha256_file(&dir.join(&rel))?;
        files.insert(rel, digest);
    }
    let edit = st.edit.as_ref();
    let manifest = Manifest {
        v: MANIFEST_VERSION,
        phase: st.phase,
        prompt_camera: seg.prompt_camera,
        active_camera: st.camera.0,
        camera: st.camera.1.to_record(),
        transform: edit.map(|e| e.transform().to_record()),
        object_visible: edit.is_none_or(|e| e.object_visible()),
        files,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).map_err(splatedit_core::Error::from)?).map_err(|e| io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> ServiceResult<Manifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(ServiceError::FileNotFound(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ServiceError::Validation(format!("manifest: {e}")))?;
    let v = value.get("v").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if v != MANIFEST_VERSION {
        return Err(ServiceError::Version {
            found: v,
            expected: MANIFEST_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| ServiceError::Validation(format!("manifest: {e}")))
}

pub(crate) fn read_session(dir: &Path) -> ServiceResult<State> {
    let m = read_manifest(dir)?;
    if !matches!(m.phase, Phase::Segmented | Phase::Ready) {
        return Err(ServiceError::Validation(format!("persisted phase {} cannot be restored", m.phase)));
    }
    for (rel, digest) in &m.files {
        if &sha256_file(&dir.join(rel))? != digest {
            return Err(ServiceError::Checksum(rel.clone()));
        }
    }
    let need = |rel: &str| -> ServiceResult<std::path::PathBuf> {
        if !m.files.contains_key(rel) {
            return Err(ServiceError::Validation(format!("manifest does not list {rel}")));
        }
        Ok(dir.join(rel))
    };
    let original: Scene32 = load_ply(need("original.ply")?)?;
    let cameras = load_cameras(need("cameras.json")?)?;
    let labels = match m.files.contains_key("labels.json") {
        true => {
            let text = std::fs::read_to_string(dir.join("labels.json")).map_err(|e| io(dir, e))?;
            let lf: LabelFile = serde_json::from_str(&text).map_err(splatedit_core::Error::from)?;
            Some(lf.labels)
        }
        false => None,
    };
    let sel: SelectionFile = serde_json::from_slice(&std::fs::read(need("selection.json")?).map_err(|e| io(dir, e))?).map_err(splatedit_core::Error::from)?;
    let masks = sel
        .masks
        .iter()
        .enumerate()
        .map(|(k, &has)| if has { read_mask_png(need(&format!("masks/view_{k:03}.png"))?).map(Some).map_err(ServiceError::from) } else { Ok(None) })
        .collect::<ServiceResult<Vec<_>>>()?;
    let object: Scene32 = load_ply(need("object.ply")?)?;
    let background: Scene32 = load_ply(need("background.ply")?)?;
    let mut st = State::new(original, cameras, labels);
    st.seg = Some(SegArtifacts {
        selected: sel.selected,
        object: Arc::new(object.clone()),
        background: Arc::new(background),
        masks,
        prompt_camera: m.prompt_camera,
    });
    st.phase = Phase::Segmented;
    if m.phase == Phase::Ready {
        let inpainted: Scene32 = load_ply(need("inpainted.ply")?)?;
        let views = sel
            .view_cameras
            .iter()
            .enumerate()
            .map(|(j, &k)| Ok((k, InpaintView::load(dir.join("views").join(format!("view_{j}")))?)))
            .collect::<ServiceResult<Vec<_>>>()?;
        let mut edit = EditSession::new(inpainted.clone(), object)?;
        if let Some(t) = &m.transform {
            edit.set_transform(RigidTransform::from_record(t)?);
        }
        if !m.object_visible {
            edit.remove_object();
        }
        st.inpainted = Some(InpaintArtifacts {
            background: Arc::new(inpainted),
            views,
        });
        st.edit = Some(edit);
        st.phase = Phase::Ready;
    }
    st.camera = (m.active_camera, Camera::from_record(&m.camera)?);
    st.progress = 1.0;
    Ok(st)
}
