//! Filling the region exposed by removing a selected object: pruning of
//! selected splats that are far from the rest of the scene, per-view
//! inpainting masks, 2D inpainting of colour and depth, reprojection of the
//! inpainted pixels into new splats, and loss-driven fine-tuning.

mod finetune;
mod inpainter;
mod losses;

pub use finetune::{finetune, reproject_init, reproject_views, view_loss, FinetuneOutput, LearningRates, OptimizerKind, ReprojectParams};
pub use inpainter::{inpaint_depth_normalized, DiffusionInpainter, Inpainter2D};
pub use losses::{depth_loss, inside_mask_color_loss, masked_ssim, outside_mask_color_loss, MsSsimProxy, PerceptualMetric, SsimTerm};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{read_depth_pfm, read_image_png, read_mask_png, refine_mask, write_depth_pfm, write_image_png, write_mask_png, DepthMap, Image2D, Mask2D};
use crate::renderer::{render, Channels, FrameBuffer};
use crate::scene::{Camera, CameraRecord, SplatScene};
use crate::segmentation::render_selection_mask;
use crate::spatial::{median_nn_distance, KdTree};
use crate::{Error, Result, Scalar};

/// Which inpainted views seed new splats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprojectionMode {
    /// Only the reference view.
    Reference,
    /// Every view, with duplicates suppressed on a voxel grid.
    AllViews,
    /// No reprojection; fine-tuning starts from the pruned scene.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub lambda_lpips: f64,
    pub ssim_term: SsimTerm,
    /// Skip pruning: every selected splat stays and is masked for inpainting.
    pub prune: bool,
    /// Distance above which a selected splat is pruned; `None` uses three
    /// times the median nearest-neighbour distance of the scene.
    pub prune_distance: Option<f64>,
    /// Pixels whose accumulated alpha falls below this after removal are holes.
    pub hole_alpha: f64,
    /// Pixels within this max-norm distance of the background colour after
    /// removal (and not before) are holes.
    pub background_distance: f64,
    pub background: [f64; 3],
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub learning_rates: LearningRates,
    pub reprojection: ReprojectionMode,
    /// Camera index anchoring reprojection; falls back to the first view
    /// with a nonempty mask.
    pub reference_view: usize,
    pub reproject_stride: usize,
    pub init_opacity: f64,
    /// Reprojected splat scale relative to the back-projected grid spacing.
    pub reproject_scale: f64,
    /// Voxel edge for multi-view duplicate suppression, as a multiple of the
    /// scene's median nearest-neighbour distance.
    pub dedup_voxel: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_depth: 1.0,
            lambda_lpips: 1.0,
            ssim_term: SsimTerm::Dissimilarity,
            prune: true,
            prune_distance: None,
            hole_alpha: 0.5,
            background_distance: 0.05,
            background: [0.0; 3],
            iterations: 2000,
            optimizer: OptimizerKind::Adam,
            learning_rates: LearningRates::default(),
            reprojection: ReprojectionMode::Reference,
            reference_view: 0,
            reproject_stride: 2,
            init_opacity: 0.8,
            reproject_scale: 0.5,
            dedup_voxel: 0.5,
        }
    }
}

impl FinetuneConfig {
    pub fn reproject_params<T: Scalar>(&self) -> ReprojectParams<T> {
        ReprojectParams {
            stride: self.reproject_stride,
            opacity: T::lit(self.init_opacity),
            scale_factor: T::lit(self.reproject_scale),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_ssim, self.lambda_depth, self.lambda_lpips, self.hole_alpha, self.background_distance, self.dedup_voxel];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("loss weights and thresholds must be nonnegative".into()));
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::InvalidParameter("lambda_ssim must lie in [0, 1]".into()));
        }
        if self.prune_distance.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::InvalidParameter("prune distance must be nonnegative".into()));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) || self.reproject_stride == 0 || !(self.reproject_scale > 0.0) {
            return Err(Error::InvalidParameter("init opacity must lie in (0, 1), stride and scale be positive".into()));
        }
        let lr = &self.learning_rates;
        if [lr.means, lr.dc, lr.opacity, lr.scaling, lr.rotation].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("learning rates must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Supervision for one camera: inpainted colour and depth plus the mask
/// they were inpainted under.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintView<T> {
    pub camera: Camera<T>,
    pub image: Image2D<T>,
    pub depth: DepthMap<T>,
    pub mask: Mask2D,
}

impl<T: Scalar> InpaintView<T> {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        self.image.check_size(w, h, "inpainted image")?;
        if self.depth.width != w || self.depth.height != h || self.mask.width != w || self.mask.height != h {
            return Err(Error::Shape("inpaint view rasters do not match the camera".into()));
        }
        if self.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(())
    }

    /// Writes `image.png`, `depth.pfm`, `mask.png` and `camera.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_image_png(&self.image, dir.join("image.png"))?;
        write_depth_pfm(&self.depth, dir.join("depth.pfm"))?;
        write_mask_png(&self.mask, dir.join("mask.png"))?;
        let cam = dir.join("camera.json");
        let text = serde_json::to_string_pretty(&self.camera.to_record())?;
        std::fs::write(&cam, text).map_err(|e| Error::io(&cam, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cam = dir.join("camera.json");
        let text = std::fs::read_to_string(&cam).map_err(|e| Error::io(&cam, e))?;
        let rec: CameraRecord = serde_json::from_str(&text).map_err(|e| Error::parse(&cam, e.to_string()))?;
        let view = Self {
            camera: Camera::from_record(&rec)?,
            image: read_image_png(dir.join("image.png"))?,
            depth: read_depth_pfm(dir.join("depth.pfm"))?,
            mask: read_mask_png(dir.join("mask.png"))?,
        };
        view.validate()?;
        Ok(view)
    }
}

/// Saves views as `view_{k}` subdirectories.
pub fn save_views<T: Scalar>(views: &[InpaintView<T>], dir: impl AsRef<Path>) -> Result<()> {
    for (k, v) in views.iter().enumerate() {
        v.save(dir.as_ref().join(format!("view_{k}")))?;
    }
    Ok(())
}

pub fn load_views<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<InpaintView<T>>> {
    let mut out = Vec::new();
    loop {
        let d = dir.as_ref().join(format!("view_{}", out.len()));
        if !d.is_dir() {
            return Ok(out);
        }
        out.push(InpaintView::load(d)?);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneResult<T> {
    pub scene: SplatScene<T>,
    /// Selected splats that survived, as indices into `scene`.
    pub residual: Vec<usize>,
    /// Original index of every splat in `scene`.
    pub kept: Vec<usize>,
    pub threshold: T,
}

/// Removes selected splats whose nearest unselected splat is farther than
/// `threshold`; the others stay as residual selection.
pub fn prune_for_reveal<T: Scalar>(scene: &SplatScene<T>, selected: &[usize], threshold: Option<T>) -> Result<PruneResult<T>> {
    if selected.is_empty() {
        return Err(Error::EmptySelection("nothing selected to prune".into()));
    }
    let mut is_sel = vec![false; scene.len()];
    for &i in selected {
        if i >= scene.len() {
            return Err(Error::InvalidParameter(format!("selected index {i} out of range")));
        }
        is_sel[i] = true;
    }
    let means: Vec<_> = scene.splats.iter().map(|s| s.mean).collect();
    let threshold = match threshold {
        Some(t) => t,
        None => T::lit(3.0) * median_nn_distance(&means).unwrap_or(T::zero()),
    };
    let others: Vec<usize> = (0..scene.len()).filter(|&i| !is_sel[i]).collect();
    let tree = KdTree::build(&others.iter().map(|&i| means[i]).collect::<Vec<_>>());
    let t2 = threshold * threshold;
    let mut kept = Vec::new();
    let mut residual = Vec::new();
    for i in 0..scene.len() {
        if is_sel[i] {
            let close = tree.nearest(means[i], None).is_some_and(|(_, d2)| d2 <= t2);
            if !close {
                continue;
            }
            residual.push(kept.len());
        }
        kept.push(i);
    }
    Ok(PruneResult {
        scene: scene.subset(&kept),
        residual,
        kept,
        threshold,
    })
}

/// The prune step as configured: with pruning disabled nothing is removed
/// and the whole selection is residual.
pub fn prune_with_config<T: Scalar>(scene: &SplatScene<T>, selected: &[usize], config: &FinetuneConfig) -> Result<PruneResult<T>> {
    if config.prune {
        return prune_for_reveal(scene, selected, config.prune_distance.map(T::lit));
    }
    if selected.is_empty() {
        return Err(Error::EmptySelection("nothing selected to prune".into()));
    }
    let mut residual = selected.to_vec();
    residual.sort_unstable();
    residual.dedup();
    Ok(PruneResult {
        scene: scene.clone(),
        residual,
        kept: (0..scene.len()).collect(),
        threshold: T::infinity(),
    })
}

fn near_background<T: Scalar>(c: [T; 3], bg: [T; 3], eps: T) -> bool {
    (0..3).all(|k| (c[k] - bg[k]).abs() < eps)
}

/// Inpainting mask from frames rendered before and after removal.
fn mask_from_frames<T: Scalar>(residual: Option<Mask2D>, before: &FrameBuffer<T>, after: &FrameBuffer<T>, bg: [T; 3], eps_alpha: T, eps_bg: T) -> Result<Mask2D> {
    let mut mask = Mask2D {
        width: after.width,
        height: after.height,
        data: (0..after.acc_alpha.len())
            .map(|i| {
                let void = after.acc_alpha[i] < eps_alpha && before.acc_alpha[i] >= eps_alpha;
                let flat = near_background(after.color[i], bg, eps_bg) && !near_background(before.color[i], bg, eps_bg);
                (void || flat) as u8
            })
            .collect(),
    };
    if let Some(r) = residual {
        mask = mask.union(&r)?;
    }
    refine_mask(&mask)
}

/// Pixels to inpaint in one camera: the residual selection rendered through
/// the pruned scene, plus pixels that became empty or background-coloured
/// by the removal. Errors with `EmptyMask` when there is nothing to fill.
#[allow(clippy::too_many_arguments)]
pub fn compute_inpaint_mask<T: Scalar>(
    original: &SplatScene<T>,
    pruned: &SplatScene<T>,
    residual: &[usize],
    camera: &Camera<T>,
    background: [T; 3],
    eps_alpha: T,
    eps_bg: T,
) -> Result<Mask2D> {
    let before = render(original, camera, background, Channels::COLOR)?;
    let after = render(pruned, camera, background, Channels::COLOR)?;
    let res = if residual.is_empty() {
        None
    } else {
        Some(render_selection_mask(pruned, residual, camera)?)
    };
    mask_from_frames(res, &before, &after, background, eps_alpha, eps_bg)
}

/// Masks, renders and inpaints every camera. Cameras with nothing to
/// inpaint are skipped; the result pairs each view with its camera index.
pub fn prepare_views<T: Scalar>(
    original: &SplatScene<T>,
    pruned: &PruneResult<T>,
    cameras: &[Camera<T>],
    inpainter: &dyn Inpainter2D<T>,
    config: &FinetuneConfig,
) -> Result<Vec<(usize, InpaintView<T>)>> {
    let bg = config.background.map(T::lit);
    let per_view: Vec<Result<Option<(usize, InpaintView<T>)>>> = cameras
        .par_iter()
        .enumerate()
        .map(|(k, cam)| {
            let mask = match compute_inpaint_mask(original, &pruned.scene, &pruned.residual, cam, bg, T::lit(config.hole_alpha), T::lit(config.background_distance)) {
                Ok(m) => m,
                Err(Error::EmptyMask) => return Ok(None),
                Err(e) => return Err(e),
            };
            let frame = render(&pruned.scene, cam, bg, Channels::COLOR | Channels::DEPTH)?;
            let image = inpainter.inpaint_rgb(&frame.color_image(), &mask)?;
            let depth = inpaint_depth_normalized(inpainter, &frame.depth_map(), &mask)?;
            Ok(Some((
                k,
                InpaintView {
                    camera: cam.clone(),
                    image,
                    depth,
                    mask,
                },
            )))
        })
        .collect();
    let mut out = Vec::new();
    for v in per_view {
        out.extend(v?);
    }
    Ok(out)
}

/// Splats reprojected from the prepared views as configured.
pub fn initial_splats<T: Scalar>(views: &[(usize, InpaintView<T>)], scene: &SplatScene<T>, config: &FinetuneConfig) -> Vec<crate::scene::Splat<T>> {
    let params = config.reproject_params();
    match config.reprojection {
        ReprojectionMode::None => Vec::new(),
        ReprojectionMode::Reference => views
            .iter()
            .find(|(k, _)| *k == config.reference_view)
            .or(views.first())
            .map(|(_, v)| reproject_init(v, scene.sh_degree, &params))
            .unwrap_or_default(),
        ReprojectionMode::AllViews => {
            let means: Vec<_> = scene.splats.iter().map(|s| s.mean).collect();
            let voxel = T::lit(config.dedup_voxel) * median_nn_distance(&means).unwrap_or(T::zero());
            let mut ordered: Vec<&InpaintView<T>> = Vec::new();
            if let Some((_, v)) = views.iter().find(|(k, _)| *k == config.reference_view) {
                ordered.push(v);
            }
            ordered.extend(views.iter().filter(|(k, _)| *k != config.reference_view).map(|(_, v)| v));
            reproject_views(&ordered, scene.sh_degree, &params, voxel)
        }
    }
}

#[derive(Clone, Debug)]
pub struct InpaintOutcome<T> {
    pub prune: PruneResult<T>,
    pub views: Vec<(usize, InpaintView<T>)>,
    pub init_count: usize,
    pub result: FinetuneOutput<T>,
}

/// Prune, mask, inpaint, reproject and fine-tune. `selected` indexes
/// `scene`; the returned scene is the filled background.
pub fn inpaint_scene<T: Scalar>(
    scene: &SplatScene<T>,
    selected: &[usize],
    cameras: &[Camera<T>],
    inpainter: &dyn Inpainter2D<T>,
    metric: &dyn PerceptualMetric<T>,
    config: &FinetuneConfig,
    progress: impl FnMut(usize, f64),
) -> Result<InpaintOutcome<T>> {
    config.validate()?;
    let prune = prune_with_config(scene, selected, config)?;
    let views = prepare_views(scene, &prune, cameras, inpainter, config)?;
    if views.is_empty() {
        return Err(Error::EmptyMask);
    }
    let init = initial_splats(&views, &prune.scene, config);
    let init_count = init.len();
    let mut start = prune.scene.clone();
    start.seg = None;
    start.splats.extend(init);
    let plain: Vec<InpaintView<T>> = views.iter().map(|(_, v)| v.clone()).collect();
    let result = finetune(&start, &plain, config, metric, progress)?;
    Ok(InpaintOutcome {
        prune,
        views,
        init_count,
        result,
    })
}
