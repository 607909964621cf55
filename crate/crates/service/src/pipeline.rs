//! The work behind segmentation and inpainting jobs, behind a trait so the
//! session machinery can be driven by a stub in tests.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use splatedit_core::imaging::Mask2D;
use splatedit_core::inpainting::{inpaint_scene, DiffusionInpainter, FinetuneConfig, InpaintView, Inpainter2D, MsSsimProxy};
use splatedit_core::segmentation::{segment, GroundTruthOracle, MaskOracle, PromptPoint, ReplayOracle, SegmentationConfig};
use splatedit_core::{Camera32, Error, Result, Scene32};

use crate::adapters::{HttpInpainter, HttpOracle};

pub struct SegmentJob {
    pub scene: Arc<Scene32>,
    pub cameras: Arc<Vec<Camera32>>,
    pub labels: Option<Arc<Vec<u32>>>,
    pub camera: usize,
    pub prompts: Vec<PromptPoint>,
}

#[derive(Clone, Debug)]
pub struct SegmentOutput {
    /// Sorted indices into the original scene.
    pub selected: Vec<usize>,
    pub masks: Vec<Option<Mask2D>>,
}

pub struct InpaintJob {
    pub scene: Arc<Scene32>,
    pub cameras: Arc<Vec<Camera32>>,
    pub selected: Vec<usize>,
    /// Camera the prompts were given in.
    pub reference_view: usize,
}

#[derive(Clone, Debug)]
pub struct InpaintOutput {
    pub background: Scene32,
    pub views: Vec<(usize, InpaintView<f32>)>,
}

pub trait Pipeline: Send + Sync {
    fn segment(&self, job: &SegmentJob, progress: &mut dyn FnMut(f64)) -> Result<SegmentOutput>;
    fn inpaint(&self, job: &InpaintJob, progress: &mut dyn FnMut(f64)) -> Result<InpaintOutput>;
}

/// Where pseudo ground-truth masks come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleSource {
    /// Per-splat labels supplied with the session.
    GroundTruth,
    Replay(PathBuf),
    Http(String),
}

impl FromStr for OracleSource {
    type Err = String;

    /// `gt`, `replay:DIR` or `http:URL` (the URL keeps its own scheme, so
    /// `http:http://host:port/segment`).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "gt" {
            return Ok(OracleSource::GroundTruth);
        }
        if let Some(dir) = s.strip_prefix("replay:") {
            return Ok(OracleSource::Replay(dir.into()));
        }
        if let Some(url) = s.strip_prefix("http:") {
            return Ok(OracleSource::Http(if url.starts_with("//") { format!("http:{url}") } else { url.to_string() }));
        }
        Err(format!("unknown oracle '{s}' (expected gt, replay:DIR or http:URL)"))
    }
}

impl OracleSource {
    pub fn build(&self, scene: &Scene32, labels: Option<&[u32]>) -> Result<Box<dyn MaskOracle<f32>>> {
        Ok(match self {
            OracleSource::GroundTruth => {
                let labels = labels.ok_or_else(|| Error::InvalidParameter("ground-truth oracle needs per-splat labels".into()))?;
                Box::new(GroundTruthOracle::new(scene, labels.to_vec())?)
            }
            OracleSource::Replay(dir) => Box::new(ReplayOracle::new(dir.clone())),
            OracleSource::Http(url) => Box::new(HttpOracle::new(url.clone(), Duration::from_secs(60))?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InpainterSource {
    Builtin,
    Http(String),
}

impl FromStr for InpainterSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "builtin" {
            return Ok(InpainterSource::Builtin);
        }
        if let Some(url) = s.strip_prefix("http:") {
            return Ok(InpainterSource::Http(if url.starts_with("//") { format!("http:{url}") } else { url.to_string() }));
        }
        Err(format!("unknown inpainter '{s}' (expected builtin or http:URL)"))
    }
}

impl InpainterSource {
    pub fn build(&self) -> Result<Arc<dyn Inpainter2D<f32>>> {
        Ok(match self {
            InpainterSource::Builtin => Arc::new(DiffusionInpainter::default()),
            InpainterSource::Http(url) => Arc::new(HttpInpainter::new(url.clone(), Duration::from_secs(120))?),
        })
    }
}

/// The real pipeline on top of the core crate.
pub struct CorePipeline {
    pub oracle: OracleSource,
    pub inpainter: Arc<dyn Inpainter2D<f32>>,
    pub segmentation: SegmentationConfig,
    pub inpainting: FinetuneConfig,
}

impl CorePipeline {
    pub fn new(oracle: OracleSource, inpainter: Arc<dyn Inpainter2D<f32>>) -> Self {
        Self {
            oracle,
            inpainter,
            segmentation: SegmentationConfig::default(),
            inpainting: FinetuneConfig::default(),
        }
    }
}

impl Pipeline for CorePipeline {
    fn segment(&self, job: &SegmentJob, progress: &mut dyn FnMut(f64)) -> Result<SegmentOutput> {
        let mut oracle = self.oracle.build(&job.scene, job.labels.as_deref().map(|l| l.as_slice()))?;
        let mut scene = (*job.scene).clone();
        progress(0.0);
        let (result, _) = segment(&mut scene, &job.cameras, job.camera, &job.prompts, &mut oracle, &self.segmentation)?;
        progress(1.0);
        Ok(SegmentOutput {
            selected: result.selected,
            masks: result.view_masks,
        })
    }

    fn inpaint(&self, job: &InpaintJob, progress: &mut dyn FnMut(f64)) -> Result<InpaintOutput> {
        let config = FinetuneConfig {
            reference_view: job.reference_view,
            ..self.inpainting.clone()
        };
        let total = config.iterations.max(1) as f64;
        let out = inpaint_scene(&job.scene, &job.selected, &job.cameras, self.inpainter.as_ref(), &MsSsimProxy::default(), &config, |step, _| {
            progress((step + 1) as f64 / total)
        })?;
        Ok(InpaintOutput {
            background: out.result.scene,
            views: out.views,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sources() {
        assert_eq!("gt".parse::<OracleSource>().unwrap(), OracleSource::GroundTruth);
        assert_eq!("replay:/tmp/m".parse::<OracleSource>().unwrap(), OracleSource::Replay("/tmp/m".into()));
        assert_eq!("http:http://h:1/s".parse::<OracleSource>().unwrap(), OracleSource::Http("http://h:1/s".into()));
        assert_eq!("http://h:1/s".parse::<OracleSource>().unwrap(), OracleSource::Http("http://h:1/s".into()));
        assert!("sam".parse::<OracleSource>().is_err());
        assert_eq!("builtin".parse::<InpainterSource>().unwrap(), InpainterSource::Builtin);
        assert!("lama".parse::<InpainterSource>().is_err());
    }
}
