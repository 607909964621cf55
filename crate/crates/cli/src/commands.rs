//! Offline drivers. Sessions are written in the service's directory format.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use splatedit_core::editing::{recompose, transform_object, RigidTransform};
use splatedit_core::imaging::{write_depth_pfm, write_image_png, write_mask_png, Mask2D};
use splatedit_core::renderer::{render, Channels};
use splatedit_core::scene::{load_cameras, load_ply, save_cameras, save_ply};
use splatedit_core::segmentation::PromptPoint;
use splatedit_core::synth::{generate, SynthSpec};
use splatedit_core::{Camera32, Scene32};
use splatedit_service::api::{CreateSessionRequest, PromptRequest, API_VERSION};
use splatedit_service::persist::Manifest;
use splatedit_service::{CorePipeline, InpainterSource, OracleSource, Phase, SessionManager};

const JOB_TIMEOUT: Duration = Duration::from_secs(24 * 3600);

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    SphereOnPlane,
    BoxOnHoledPlane,
}

pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub preset: Preset,
    pub views: usize,
    pub width: usize,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Writes `scene.ply`, `cameras.json`, `labels.json`, `empty.ply` and the
/// resolved `spec.json`.
pub fn synth(a: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str::<SynthSpec>(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("invalid spec {}", p.display()))?,
        None => match a.preset {
            Preset::SphereOnPlane => SynthSpec::sphere_on_plane(a.seed.unwrap_or(0), a.views, a.width),
            Preset::BoxOnHoledPlane => SynthSpec::box_on_holed_plane(a.seed.unwrap_or(0), a.views, a.width),
        },
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let syn = generate::<f32>(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    save_ply(&syn.scene, a.out.join("scene.ply"))?;
    save_ply(&syn.empty_scene, a.out.join("empty.ply"))?;
    save_cameras(&syn.cameras, a.out.join("cameras.json"))?;
    std::fs::write(a.out.join("labels.json"), serde_json::to_vec(&syn.label_file())?)?;
    std::fs::write(a.out.join("spec.json"), serde_json::to_vec_pretty(&spec)?)?;
    Ok(spec)
}

/// `x,y` or `x,y,-` for a negative point.
pub fn parse_point(s: &str) -> std::result::Result<PromptPoint, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<usize>().map_err(|e| format!("bad coordinate '{t}': {e}"));
    match parts.as_slice() {
        [x, y] => Ok(PromptPoint::positive(num(x)?, num(y)?)),
        [x, y, sign] => Ok(PromptPoint {
            x: num(x)?,
            y: num(y)?,
            positive: match *sign {
                "+" => true,
                "-" => false,
                other => return Err(format!("point sign must be + or -, got '{other}'")),
            },
        }),
        _ => Err(format!("expected x,y[,+|-], got '{s}'")),
    }
}

fn manager(oracle: OracleSource, inpainter: &InpainterSource, iterations: Option<usize>) -> Result<SessionManager> {
    let mut p = CorePipeline::new(oracle, inpainter.build()?);
    if let Some(n) = iterations {
        p.inpainting.iterations = n;
    }
    Ok(SessionManager::new(Arc::new(p)))
}

fn finish_job(m: &SessionManager, id: &str, want: Phase) -> Result<()> {
    let st = m.wait(id, JOB_TIMEOUT)?;
    if st.phase != want {
        bail!("job ended in phase {}: {}", st.phase, st.error.unwrap_or_default());
    }
    Ok(())
}

pub struct SegmentArgs {
    pub scene: PathBuf,
    pub cameras: PathBuf,
    pub labels: Option<PathBuf>,
    pub oracle: OracleSource,
    pub camera: usize,
    pub points: Vec<PromptPoint>,
    pub out: PathBuf,
}

pub fn segment(a: &SegmentArgs) -> Result<Manifest> {
    if a.oracle == OracleSource::GroundTruth && a.labels.is_none() {
        bail!("the gt oracle needs --labels");
    }
    let m = manager(a.oracle.clone(), &InpainterSource::Builtin, None)?;
    let created = m.create_from_files(&CreateSessionRequest {
        v: API_VERSION,
        scene: a.scene.clone(),
        cameras: a.cameras.clone(),
        labels: a.labels.clone(),
    })?;
    m.submit_prompts(
        &created.id,
        &PromptRequest {
            v: API_VERSION,
            camera: a.camera,
            points: a.points.clone(),
        },
    )?;
    finish_job(&m, &created.id, Phase::Segmented)?;
    Ok(m.persist(&created.id, &a.out)?)
}

pub struct InpaintArgs {
    pub session: PathBuf,
    pub inpainter: InpainterSource,
    pub iterations: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn inpaint(a: &InpaintArgs) -> Result<Manifest> {
    let m = manager(OracleSource::GroundTruth, &a.inpainter, a.iterations)?;
    let s = m.load(&a.session)?;
    m.run_inpaint(&s.id, API_VERSION)?;
    finish_job(&m, &s.id, Phase::Ready)?;
    Ok(m.persist(&s.id, a.out.as_deref().unwrap_or(&a.session))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Channel {
    Color,
    Depth,
    /// Accumulated opacity above one half.
    Alpha,
}

pub struct RenderArgs {
    pub scene: PathBuf,
    pub cameras: PathBuf,
    pub view: Option<usize>,
    pub channel: Channel,
    pub out: PathBuf,
}

/// One file per view: `view_{k:03}.png`, or `.pfm` for depth.
pub fn render_views(a: &RenderArgs) -> Result<Vec<PathBuf>> {
    let scene: Scene32 = load_ply(&a.scene)?;
    let cameras: Vec<Camera32> = load_cameras(&a.cameras)?;
    let views: Vec<usize> = match a.view {
        Some(k) if k >= cameras.len() => bail!("view {k} out of range ({} cameras)", cameras.len()),
        Some(k) => vec![k],
        None => (0..cameras.len()).collect(),
    };
    std::fs::create_dir_all(&a.out)?;
    let channels = match a.channel {
        Channel::Color => Channels::COLOR,
        Channel::Depth | Channel::Alpha => Channels::DEPTH,
    };
    let mut written = Vec::new();
    for k in views {
        let f = render(&scene, &cameras[k], [0.0; 3], channels)?;
        let path = a.out.join(format!("view_{k:03}.{}", if a.channel == Channel::Depth { "pfm" } else { "png" }));
        match a.channel {
            Channel::Color => write_image_png(&f.color_image(), &path)?,
            Channel::Depth => write_depth_pfm(&f.depth_map(), &path)?,
            Channel::Alpha => write_mask_png(&Mask2D::from_fn(f.width, f.height, |x, y| f.acc_alpha[f.idx(x, y)] > 0.5), &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

pub struct EditArgs {
    pub session: Option<PathBuf>,
    pub background: Option<PathBuf>,
    pub object: Option<PathBuf>,
    pub transform: PathBuf,
    pub out: PathBuf,
}

/// Background plus the transformed object, written as one PLY. With a
/// session the inpainted background is used when present.
pub fn edit(a: &EditArgs) -> Result<usize> {
    let (background, object): (Scene32, Scene32) = match (&a.session, &a.background, &a.object) {
        (Some(dir), None, None) => {
            let m = manager(OracleSource::GroundTruth, &InpainterSource::Builtin, None)?;
            let s = m.load(dir)?;
            let seg = s.segmentation().ok_or_else(|| anyhow!("session has no segmentation"))?;
            let bg = s.inpainted().map(|i| i.background).unwrap_or(seg.background);
            ((*bg).clone(), (*seg.object).clone())
        }
        (None, Some(b), Some(o)) => (load_ply(b)?, load_ply(o)?),
        _ => bail!("give either --session or both --background and --object"),
    };
    let text = std::fs::read_to_string(&a.transform).with_context(|| format!("reading {}", a.transform.display()))?;
    let t = RigidTransform::<f32>::from_json(&text).with_context(|| format!("invalid transform {}", a.transform.display()))?;
    let composite = recompose(&background, &transform_object(&object, &t))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_ply(&composite, &a.out)?;
    Ok(composite.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_syntax() {
        assert_eq!(parse_point("3,4").unwrap(), PromptPoint::positive(3, 4));
        assert_eq!(parse_point(" 3, 4 ,-").unwrap(), PromptPoint { x: 3, y: 4, positive: false });
        assert!(parse_point("3").is_err());
        assert!(parse_point("3,4,?").is_err());
        assert!(parse_point("-1,4").is_err());
    }
}
