use super::{
    bbox3d_of_high_scores, extract_prompts, merge_segmentation, Aabb, LossReduction, MaskOracle, MaskTarget, OracleQuery,
    PromptPoint, SegmentationConfig, SegmentationResult,
};
use crate::imaging::{Image2D, Mask2D, SoftMask};
use crate::renderer::{render, render_backward, render_traced, Channels, FrameGrad, ParamSet, RenderSettings};
use crate::scene::{Camera, SplatScene};
use crate::{Error, Result, Scalar};

/// Audit trail of a training pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Object masks returned by the oracle, per view.
    pub view_masks: Vec<Option<Mask2D>>,
    /// Dual masks returned by the oracle, per view (fine stage only).
    pub dual_masks: Vec<Option<Mask2D>>,
    /// Mean-reduced loss before every SGD step.
    pub losses: Vec<f64>,
    pub skipped: Vec<usize>,
}

fn soft<T: Scalar>(w: usize, h: usize, data: Vec<T>) -> SoftMask<T> {
    SoftMask { width: w, height: h, data }
}

fn ask<T: Scalar, O: MaskOracle<T> + ?Sized>(
    oracle: &mut O,
    view: usize,
    camera: &Camera<T>,
    image: &Image2D<T>,
    prompts: &[PromptPoint],
    target: MaskTarget,
) -> Result<Mask2D> {
    let q = OracleQuery {
        view,
        camera,
        image,
        prompts,
        target,
    };
    let m = oracle.request(&q).map_err(|e| match e {
        e @ Error::Oracle { .. } => e,
        e => Error::Oracle {
            view,
            message: e.to_string(),
        },
    })?;
    if m.width != camera.width || m.height != camera.height {
        return Err(Error::Oracle {
            view,
            message: format!("mask is {}×{}, view is {}×{}", m.width, m.height, camera.width, camera.height),
        });
    }
    Ok(m)
}

fn first_render<T: Scalar>(
    scene: &SplatScene<T>,
    camera: &Camera<T>,
    config: &SegmentationConfig,
    channels: Channels,
) -> Result<(Image2D<T>, SoftMask<T>, SoftMask<T>)> {
    let bg = config.background.map(T::lit);
    let f = render(scene, camera, bg, channels | Channels::COLOR)?;
    let (w, h) = (f.width, f.height);
    Ok((
        Image2D {
            width: w,
            height: h,
            data: f.color,
        },
        soft(w, h, f.mask),
        soft(w, h, f.dual_mask),
    ))
}

fn reduction_scale<T: Scalar>(config: &SegmentationConfig, n: usize) -> T {
    match config.loss_reduction {
        LossReduction::Sum => T::one(),
        LossReduction::Mean => T::one() / T::from_usize_lossy(n.max(1)),
    }
}

fn lm<T: Scalar>(t: T, r: T, lambda: T) -> T {
    -t * r + lambda * (T::one() - t) * r
}

/// Per-view SGD on score logits. `object`/`dual` are the oracle targets;
/// the disjointness terms are active when `fine` is set.
fn train_view<T: Scalar>(
    scene: &mut SplatScene<T>,
    camera: &Camera<T>,
    object: Option<&Mask2D>,
    dual: Option<&Mask2D>,
    fine: bool,
    config: &SegmentationConfig,
    log: &mut TrainLog,
) -> Result<()> {
    let (lr, lam, ldd) = (T::lit(config.lr), T::lit(config.lambda_neg), T::lit(config.lambda_dd));
    let n = camera.pixel_count();
    let scale = reduction_scale::<T>(config, n);
    let channels = if fine { Channels::MASK | Channels::DUAL_MASK } else { Channels::MASK };
    let bg = config.background.map(T::lit);
    let settings = RenderSettings::default();
    let t_obj: Option<Vec<T>> = object.map(|m| m.to_soft::<T>().data);
    let t_dual: Option<Vec<T>> = dual.map(|m| m.to_soft::<T>().data);
    for _ in 0..config.n_inner {
        let (frame, trace) = render_traced(scene, camera, bg, channels, &settings)?;
        let mut g_mask = vec![T::zero(); n];
        let mut g_dual = if fine { vec![T::zero(); n] } else { Vec::new() };
        let mut loss = T::zero();
        for p in 0..n {
            let mr = frame.mask[p];
            if let Some(t) = &t_obj {
                loss += lm(t[p], mr, lam);
                g_mask[p] += -t[p] + lam * (T::one() - t[p]);
            }
            if fine {
                let md = frame.dual_mask[p];
                if let Some(t) = &t_dual {
                    loss += lm(t[p], md, lam);
                    g_dual[p] += -t[p] + lam * (T::one() - t[p]);
                }
                // L_m(−M_r, M_rd) + λ_dd L_m(−M_rd, M_r), differentiated in both arguments
                loss += lm(-mr, md, lam) + ldd * lm(-md, mr, lam);
                g_dual[p] += mr + lam * (T::one() + mr) + ldd * (T::one() + lam) * mr;
                g_mask[p] += (T::one() + lam) * md + ldd * (md + lam * (T::one() + md));
            }
        }
        let mean_loss = loss / T::from_usize_lossy(n);
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { step: log.losses.len() });
        }
        log.losses.push(mean_loss.to_f64_lossy());
        let mut fg = FrameGrad::empty(camera.width, camera.height);
        fg.mask = Some(g_mask.into_iter().map(|g| g * scale).collect());
        if fine {
            fg.dual_mask = Some(g_dual.into_iter().map(|g| g * scale).collect());
        }
        let grads = render_backward(scene, camera, &trace, &fg, ParamSet::SCORES)?;
        let seg = scene.seg.as_mut().expect("scores attached before training");
        for (s, g) in seg.score.iter_mut().zip(&grads.scores) {
            *s -= lr * *g;
        }
        if fine {
            if let Some(d) = &mut seg.dual_score {
                for (s, g) in d.iter_mut().zip(&grads.dual_scores) {
                    *s -= lr * *g;
                }
            }
        }
    }
    Ok(())
}

/// Coarse stage: one pass over the cameras starting at `start`, supervised
/// by the given prompts there and by self-extracted prompts elsewhere.
pub fn coarse_pass<T: Scalar, O: MaskOracle<T> + ?Sized>(
    scene: &mut SplatScene<T>,
    cameras: &[Camera<T>],
    start: usize,
    initial_prompts: &[PromptPoint],
    oracle: &mut O,
    config: &SegmentationConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if cameras.is_empty() {
        return Err(Error::NoPropagation);
    }
    if start >= cameras.len() {
        return Err(Error::InvalidParameter(format!("start view {start} out of range")));
    }
    if initial_prompts.is_empty() {
        return Err(Error::InvalidParameter("no prompt points given".into()));
    }
    for p in initial_prompts {
        p.check_bounds(cameras[start].width, cameras[start].height)?;
    }
    scene.ensure_seg(T::lit(config.init_logit));
    let mut log = TrainLog {
        view_masks: vec![None; cameras.len()],
        dual_masks: vec![None; cameras.len()],
        ..Default::default()
    };
    let ts = T::lit(config.score_threshold);
    for step in 0..cameras.len() {
        let v = (start + step) % cameras.len();
        let cam = &cameras[v];
        let (image, mask, _) = first_render(scene, cam, config, Channels::MASK)?;
        let prompts = if v == start {
            initial_prompts.to_vec()
        } else {
            extract_prompts(&mask, config.prompts_per_view, ts)
        };
        if prompts.is_empty() {
            log.skipped.push(v);
            continue;
        }
        let target = ask(oracle, v, cam, &image, &prompts, MaskTarget::Object)?;
        train_view(scene, cam, Some(&target), None, false, config, &mut log)?;
        log.view_masks[v] = Some(target);
    }
    if log.skipped.len() == cameras.len() {
        return Err(Error::NoPropagation);
    }
    Ok(log)
}

/// Sets dual logits to `+logit` outside `bbox` and `−logit` inside
/// (boundary counts as inside).
pub fn init_dual_scores<T: Scalar>(scene: &mut SplatScene<T>, bbox: &Aabb<T>, logit: T) {
    let dual: Vec<T> = scene.splats.iter().map(|s| if bbox.contains(s.mean) { -logit } else { logit }).collect();
    scene.ensure_seg(T::zero()).dual_score = Some(dual);
}

/// Fine stage: one more pass with both score and dual score self-prompted
/// and the disjointness terms active.
pub fn fine_pass<T: Scalar, O: MaskOracle<T> + ?Sized>(
    scene: &mut SplatScene<T>,
    cameras: &[Camera<T>],
    oracle: &mut O,
    config: &SegmentationConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if cameras.is_empty() {
        return Err(Error::NoPropagation);
    }
    if scene.seg.as_ref().and_then(|s| s.dual_score.as_ref()).is_none() {
        return Err(Error::InvalidParameter("dual scores must be initialized before the fine stage".into()));
    }
    let ts = T::lit(config.score_threshold);
    let mut log = TrainLog {
        view_masks: vec![None; cameras.len()],
        dual_masks: vec![None; cameras.len()],
        ..Default::default()
    };
    for (v, cam) in cameras.iter().enumerate() {
        let (image, mask, dual) = first_render(scene, cam, config, Channels::MASK | Channels::DUAL_MASK)?;
        let p_obj = extract_prompts(&mask, config.prompts_per_view, ts);
        let p_dual = extract_prompts(&dual, config.prompts_per_view, ts);
        if p_obj.is_empty() && p_dual.is_empty() {
            log.skipped.push(v);
            continue;
        }
        let m_obj = if p_obj.is_empty() {
            None
        } else {
            Some(ask(oracle, v, cam, &image, &p_obj, MaskTarget::Object)?)
        };
        let m_dual = if p_dual.is_empty() {
            None
        } else {
            Some(ask(oracle, v, cam, &image, &p_dual, MaskTarget::Dual)?)
        };
        train_view(scene, cam, m_obj.as_ref(), m_dual.as_ref(), true, config, &mut log)?;
        log.view_masks[v] = m_obj;
        log.dual_masks[v] = m_dual;
    }
    if log.skipped.len() == cameras.len() {
        return Err(Error::NoPropagation);
    }
    Ok(log)
}

/// Coarse stage, optional fine stage, then merge.
pub fn segment<T: Scalar, O: MaskOracle<T> + ?Sized>(
    scene: &mut SplatScene<T>,
    cameras: &[Camera<T>],
    start: usize,
    prompts: &[PromptPoint],
    oracle: &mut O,
    config: &SegmentationConfig,
) -> Result<(SegmentationResult<T>, TrainLog)> {
    let mut log = coarse_pass(scene, cameras, start, prompts, oracle, config)?;
    if config.fine_stage {
        let bbox = bbox3d_of_high_scores(scene, T::lit(config.score_threshold))?;
        init_dual_scores(scene, &bbox, T::lit(config.dual_init_logit));
        let fine = fine_pass(scene, cameras, oracle, config)?;
        log.losses.extend(fine.losses);
        log.dual_masks = fine.dual_masks;
    }
    let mut result = merge_segmentation(scene, config)?;
    result.view_masks = log.view_masks.clone();
    Ok((result, log))
}
