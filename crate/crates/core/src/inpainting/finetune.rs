use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::losses::{depth_loss, inside_mask_color_loss, outside_mask_color_loss, PerceptualMetric};
use super::{FinetuneConfig, InpaintView};
use crate::math::{Quat, Vec3};
use crate::renderer::{render_backward, render_traced, Channels, FrameGrad, GradientBuffer, ParamSet, RenderSettings};
use crate::scene::{sh, Splat, SplatScene};
use crate::{Error, Result, Scalar};

/// Grid stride, opacity and size of reprojected splats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprojectParams<T> {
    pub stride: usize,
    pub opacity: T,
    /// Splat scale as a multiple of the back-projected grid spacing
    /// `D·stride/fx`.
    pub scale_factor: T,
}

impl<T: Scalar> Default for ReprojectParams<T> {
    fn default() -> Self {
        Self {
            stride: 2,
            opacity: T::lit(0.8),
            scale_factor: T::lit(0.5),
        }
    }
}

/// New splats for the masked pixels of `view`, one per pixel of a grid
/// with the given stride. Pixels without a positive depth are skipped.
pub fn reproject_init<T: Scalar>(view: &InpaintView<T>, sh_degree: usize, params: &ReprojectParams<T>) -> Vec<Splat<T>> {
    let cam = &view.camera;
    let stride = params.stride.max(1);
    let mut out = Vec::new();
    for y in (0..cam.height).step_by(stride) {
        for x in (0..cam.width).step_by(stride) {
            let i = y * cam.width + x;
            if view.mask.data[i] == 0 {
                continue;
            }
            let d = view.depth.data[i];
            if !view.depth.valid[i] || !(d > T::zero()) || !d.is_finite() {
                continue;
            }
            let p = cam.camera_to_world(cam.unproject(T::from_usize_lossy(x) + T::lit(0.5), T::from_usize_lossy(y) + T::lit(0.5), d));
            let scale = params.scale_factor * d * T::from_usize_lossy(stride) / cam.fx;
            let mut s = Splat::isotropic(p, scale, params.opacity, view.image.data[i]);
            s.sh.resize(sh::coeff_count(sh_degree), [T::zero(); 3]);
            out.push(s);
        }
    }
    if out.is_empty() && view.mask.count() > 0 {
        log::warn!("reprojection produced no splats: no valid depth in the mask");
    }
    out
}

/// Reprojects several views, dropping splats whose mean falls in a voxel
/// already occupied by an earlier one.
pub fn reproject_views<T: Scalar>(views: &[&InpaintView<T>], sh_degree: usize, params: &ReprojectParams<T>, voxel: T) -> Vec<Splat<T>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for v in views {
        for s in reproject_init(v, sh_degree, params) {
            let key = if voxel > T::zero() {
                let k = |c: T| (c / voxel).floor().to_i64().unwrap_or(i64::MAX);
                Some((k(s.mean.x), k(s.mean.y), k(s.mean.z)))
            } else {
                None
            };
            if key.map_or(true, |k| seen.insert(k)) {
                out.push(s);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Learning rates per parameter group. The mean rate is multiplied by the
/// scene extent (1.1 × the largest camera distance from the camera
/// centroid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub means: f64,
    pub dc: f64,
    pub opacity: f64,
    pub scaling: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            dc: 2.5e-3,
            opacity: 0.05,
            scaling: 5e-3,
            rotation: 1e-3,
        }
    }
}

/// Flat view of the optimized parameters, in a fixed per-splat layout:
/// mean (3), rotation (4), log-scale (3), opacity logit (1), dc (3).
const STRIDE: usize = 14;

fn group_lr(k: usize, lr: &LearningRates, extent: f64) -> f64 {
    match k {
        0..=2 => lr.means * extent,
        3..=6 => lr.rotation,
        7..=9 => lr.scaling,
        10 => lr.opacity,
        _ => lr.dc,
    }
}

fn flat_grad<T: Scalar>(g: &GradientBuffer<T>, i: usize) -> [T; STRIDE] {
    let mut v = [T::zero(); STRIDE];
    v[..3].copy_from_slice(&g.means[i]);
    v[3..7].copy_from_slice(&g.rotations[i]);
    v[7..10].copy_from_slice(&g.log_scales[i]);
    v[10] = g.opacity_logits[i];
    v[11..].copy_from_slice(&g.dc[i]);
    v
}

fn apply<T: Scalar>(s: &mut Splat<T>, d: &[T; STRIDE]) {
    s.mean = s.mean - Vec3::new(d[0], d[1], d[2]);
    s.rotation = Quat::new(s.rotation.w - d[3], s.rotation.x - d[4], s.rotation.y - d[5], s.rotation.z - d[6]);
    s.log_scale = s.log_scale - Vec3::new(d[7], d[8], d[9]);
    s.opacity_logit -= d[10];
    for c in 0..3 {
        s.sh[0][c] -= d[11 + c];
    }
}

struct Optimizer<T> {
    kind: OptimizerKind,
    lr: [T; STRIDE],
    m: Vec<[T; STRIDE]>,
    v: Vec<[T; STRIDE]>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    fn new(kind: OptimizerKind, rates: &LearningRates, extent: f64, n: usize) -> Self {
        Self {
            kind,
            lr: std::array::from_fn(|k| T::lit(group_lr(k, rates, extent))),
            m: vec![[T::zero(); STRIDE]; n],
            v: vec![[T::zero(); STRIDE]; n],
            t: 0,
        }
    }

    fn step(&mut self, scene: &mut SplatScene<T>, g: &GradientBuffer<T>) {
        self.t += 1;
        let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-15));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (i, s) in scene.splats.iter_mut().enumerate() {
            let gi = flat_grad(g, i);
            let d: [T; STRIDE] = match self.kind {
                OptimizerKind::Sgd => std::array::from_fn(|k| self.lr[k] * gi[k]),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    std::array::from_fn(|k| {
                        m[k] = b1 * m[k] + (T::one() - b1) * gi[k];
                        v[k] = b2 * v[k] + (T::one() - b2) * gi[k] * gi[k];
                        self.lr[k] * (m[k] / c1) / ((v[k] / c2).sqrt() + eps)
                    })
                }
            };
            apply(s, &d);
            s.renormalize();
        }
    }
}

fn scene_extent<T: Scalar>(views: &[InpaintView<T>]) -> f64 {
    let centers: Vec<Vec3<f64>> = views.iter().map(|v| v.camera.center().cast()).collect();
    let mean = centers.iter().fold(Vec3::zero(), |a, &c| a + c) * (1.0 / centers.len() as f64);
    let r = centers.iter().map(|&c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 1e-9 {
        1.1 * r
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutput<T> {
    pub scene: SplatScene<T>,
    /// Total loss before each step's update.
    pub losses: Vec<f64>,
}

impl<T> FinetuneOutput<T> {
    /// Mean loss over the last `window` steps.
    pub fn tail_loss(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.losses.len().max(1));
        let tail = &self.losses[self.losses.len().saturating_sub(w)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Total loss for one view and its gradient w.r.t. the rendered frame.
pub fn view_loss<T: Scalar>(
    scene: &SplatScene<T>,
    view: &InpaintView<T>,
    config: &FinetuneConfig,
    metric: &dyn PerceptualMetric<T>,
    settings: &RenderSettings<T>,
) -> Result<(T, FrameGrad<T>, crate::renderer::RenderTrace<T>)> {
    let bg = config.background.map(T::lit);
    let (frame, trace) = render_traced(scene, &view.camera, bg, Channels::COLOR | Channels::DEPTH, settings)?;
    let rendered = frame.color_image();
    let (lo, go) = outside_mask_color_loss(&view.image, &view.mask, &rendered, T::lit(config.lambda_ssim), config.ssim_term)?;
    let (ld, gd) = depth_loss(&view.depth, &frame.depth_map(), T::lit(config.lambda_depth))?;
    let (li, gi) = inside_mask_color_loss(&view.image, &view.mask, &rendered, metric, T::lit(config.lambda_lpips))?;
    let mut g = FrameGrad::empty(frame.width, frame.height);
    g.color = Some(go.iter().zip(&gi).map(|(a, b)| std::array::from_fn(|c| a[c] + b[c])).collect());
    g.depth = Some(gd);
    Ok((lo + ld + li, g, trace))
}

/// Optimizes means, rotations, scales, opacities and DC colours against
/// the views, one view per step in round-robin order. Splat count and
/// higher SH bands never change.
pub fn finetune<T: Scalar>(
    scene: &SplatScene<T>,
    views: &[InpaintView<T>],
    config: &FinetuneConfig,
    metric: &dyn PerceptualMetric<T>,
    mut progress: impl FnMut(usize, f64),
) -> Result<FinetuneOutput<T>> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidParameter("fine-tuning needs at least one view".into()));
    }
    let mut scene = scene.clone();
    scene.seg = None;
    let mut opt = Optimizer::new(config.optimizer, &config.learning_rates, scene_extent(views), scene.len());
    let settings = RenderSettings::default();
    let params = ParamSet::GEOMETRY | ParamSet::OPACITY | ParamSet::COLOR;
    let mut losses = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let view = &views[step % views.len()];
        let (loss, g, trace) = view_loss(&scene, view, config, metric, &settings)?;
        let lf = loss.to_f64_lossy();
        if !lf.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = render_backward(&scene, &view.camera, &trace, &g, params)?;
        if !grads.is_finite() {
            return Err(Error::Diverged { step });
        }
        opt.step(&mut scene, &grads);
        if let Some(i) = scene.splats.iter().position(|s| !s.is_finite()) {
            log::warn!("splat {i} became non-finite at step {step}");
            return Err(Error::Diverged { step });
        }
        losses.push(lf);
        progress(step, lf);
    }
    Ok(FinetuneOutput { scene, losses })
}
