use std::collections::BTreeSet;
use std::path::PathBuf;

use super::PromptPoint;
use crate::imaging::{read_mask_png, Image2D, Mask2D};
use crate::renderer::{render, Channels};
use crate::scene::{Camera, SplatScene};
use crate::{Error, Result, Scalar};

/// Which pseudo ground truth a query asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskTarget {
    /// Mask of the prompted object.
    Object,
    /// Mask of content prompted from the dual mask.
    Dual,
}

/// One oracle request. Oracles backed by a segmentation network only need
/// the image and prompts; the rest lets synthetic and replay oracles answer.
#[derive(Clone, Debug)]
pub struct OracleQuery<'a, T> {
    pub view: usize,
    pub camera: &'a Camera<T>,
    pub image: &'a Image2D<T>,
    pub prompts: &'a [PromptPoint],
    pub target: MaskTarget,
}

/// Produces a 2D mask for an image and prompt points.
pub trait MaskOracle<T: Scalar>: Send {
    fn request(&mut self, query: &OracleQuery<'_, T>) -> Result<Mask2D>;
}

impl<T: Scalar, O: MaskOracle<T> + ?Sized> MaskOracle<T> for Box<O> {
    fn request(&mut self, query: &OracleQuery<'_, T>) -> Result<Mask2D> {
        (**self).request(query)
    }
}

/// Answers from per-splat labels: every pixel gets the label that covers
/// it with the most accumulated opacity (none below 0.5), and the result is
/// the union of the label regions under the prompt points.
#[derive(Clone, Debug)]
pub struct GroundTruthOracle<T> {
    scene: SplatScene<T>,
    labels: Vec<u32>,
    cache: Vec<(Camera<T>, Vec<Option<u32>>)>,
}

impl<T: Scalar> GroundTruthOracle<T> {
    pub fn new(scene: &SplatScene<T>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != scene.len() {
            return Err(Error::Shape(format!("{} labels for {} splats", labels.len(), scene.len())));
        }
        let mut scene = scene.clone();
        scene.seg = None;
        Ok(Self {
            scene,
            labels,
            cache: Vec::new(),
        })
    }

    /// Dominant label per pixel.
    pub fn label_map(&mut self, camera: &Camera<T>) -> Result<Vec<Option<u32>>> {
        if let Some((_, m)) = self.cache.iter().find(|(c, _)| c == camera) {
            return Ok(m.clone());
        }
        let distinct: BTreeSet<u32> = self.labels.iter().copied().collect();
        let n = camera.pixel_count();
        let mut best = vec![(T::lit(0.5), None); n];
        for &label in &distinct {
            let mut s = self.scene.clone();
            let seg = s.ensure_seg(T::zero());
            for (v, &l) in seg.score.iter_mut().zip(&self.labels) {
                *v = T::lit(if l == label { 20.0 } else { -20.0 });
            }
            let frame = render(&s, camera, [T::zero(); 3], Channels::MASK)?;
            for (b, &m) in best.iter_mut().zip(&frame.mask) {
                if m >= b.0 {
                    *b = (m, Some(label));
                }
            }
        }
        let map: Vec<Option<u32>> = best.into_iter().map(|b| b.1).collect();
        self.cache.push((camera.clone(), map.clone()));
        Ok(map)
    }

    /// Pixels whose dominant label is in `labels`.
    pub fn mask_of(&mut self, camera: &Camera<T>, labels: &[u32]) -> Result<Mask2D> {
        let map = self.label_map(camera)?;
        Ok(Mask2D {
            width: camera.width,
            height: camera.height,
            data: map.iter().map(|l| l.is_some_and(|l| labels.contains(&l)) as u8).collect(),
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

impl<T: Scalar> MaskOracle<T> for GroundTruthOracle<T> {
    fn request(&mut self, q: &OracleQuery<'_, T>) -> Result<Mask2D> {
        let map = self.label_map(q.camera)?;
        let w = q.camera.width;
        let mut picked = Vec::new();
        for p in q.prompts.iter().filter(|p| p.positive) {
            p.check_bounds(w, q.camera.height)?;
            if let Some(l) = map[p.y * w + p.x] {
                picked.push(l);
            }
        }
        Ok(Mask2D {
            width: w,
            height: q.camera.height,
            data: map.iter().map(|l| l.is_some_and(|l| picked.contains(&l)) as u8).collect(),
        })
    }
}

/// Serves pre-recorded masks `{view:03}_object.png` / `{view:03}_dual.png`
/// from a directory, falling back to `{view:03}.png`.
#[derive(Clone, Debug)]
pub struct ReplayOracle {
    pub dir: PathBuf,
}

impl ReplayOracle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl<T: Scalar> MaskOracle<T> for ReplayOracle {
    fn request(&mut self, q: &OracleQuery<'_, T>) -> Result<Mask2D> {
        let suffix = match q.target {
            MaskTarget::Object => "object",
            MaskTarget::Dual => "dual",
        };
        let specific = self.dir.join(format!("{:03}_{suffix}.png", q.view));
        let path = if specific.exists() {
            specific
        } else {
            self.dir.join(format!("{:03}.png", q.view))
        };
        if !path.exists() {
            return Err(Error::Oracle {
                view: q.view,
                message: format!("no recorded mask at {}", path.display()),
            });
        }
        read_mask_png(&path)
    }
}
