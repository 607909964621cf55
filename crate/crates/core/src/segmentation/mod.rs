//! Prompt-driven 3D selection. Per-splat score logits are rendered as a
//! mask channel and trained view by view against oracle masks; a second
//! stage adds dual scores for content outside the selection, and a merge
//! step turns both into a set of selected splats.

mod oracle;
mod prompts;
mod train;

pub use oracle::{GroundTruthOracle, MaskOracle, MaskTarget, OracleQuery, ReplayOracle};
pub use prompts::{extract_prompts, PromptPoint};
pub use train::{coarse_pass, fine_pass, init_dual_scores, segment, TrainLog};

use serde::{Deserialize, Serialize};

use crate::imaging::{Mask2D, SoftMask};
use crate::math::Vec3;
use crate::renderer::{render, Channels};
use crate::scene::{Camera, SplatScene};
use crate::spatial::{median_nn_distance, KdTree};
use crate::{Error, Result, Scalar};

/// How per-pixel mask losses are reduced for the optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Sum over pixels: the learning rate acts per pixel of evidence.
    Sum,
    /// Mean over pixels.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub lr: f64,
    pub lambda_dd: f64,
    pub lambda_neg: f64,
    pub score_threshold: f64,
    pub dual_threshold: f64,
    /// Expansion radius as a multiple of the median nearest-neighbour
    /// distance among selected splats.
    pub expansion_factor: f64,
    /// Repeat expansion until nothing more is added.
    pub expansion_fixpoint: bool,
    pub prompts_per_view: usize,
    /// SGD steps per view.
    pub n_inner: usize,
    /// Score logit of splats before training.
    pub init_logit: f64,
    /// Magnitude of the dual-score logit set at initialization.
    pub dual_init_logit: f64,
    pub loss_reduction: LossReduction,
    pub fine_stage: bool,
    pub background: [f64; 3],
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            lambda_dd: 0.1,
            lambda_neg: 1.0,
            score_threshold: 0.5,
            dual_threshold: 0.3,
            expansion_factor: 2.0,
            expansion_fixpoint: false,
            prompts_per_view: 3,
            n_inner: 10,
            init_logit: -2.0,
            dual_init_logit: 4.6,
            loss_reduction: LossReduction::Sum,
            fine_stage: true,
            background: [0.0; 3],
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.score_threshold) || !unit(self.dual_threshold) {
            return Err(Error::InvalidParameter("thresholds must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.lambda_dd < 0.0 || self.lambda_neg < 0.0 || self.expansion_factor < 0.0 {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    /// Boundary points count as inside.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x && p.y >= self.min.y && p.z >= self.min.z && p.x <= self.max.x && p.y <= self.max.y && p.z <= self.max.z
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::lit(0.5)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult<T> {
    /// Sorted indices of selected splats.
    pub selected: Vec<usize>,
    pub bbox3d: Aabb<T>,
    /// Oracle masks per view (`None` for skipped views), when recorded.
    pub view_masks: Vec<Option<Mask2D>>,
}

/// Mask loss `L_m(T, R) = −Σ T·R / N + λ_neg Σ (1 − T)·R / N` and its
/// gradient w.r.t. `R`. Targets may hold negated masks.
pub fn mask_loss<T: Scalar>(target: &SoftMask<T>, rendered: &SoftMask<T>, lambda_neg: T) -> Result<(T, Vec<T>)> {
    if target.width != rendered.width || target.height != rendered.height {
        return Err(Error::Shape("mask loss operands".into()));
    }
    let n = T::from_usize_lossy(target.data.len().max(1));
    let mut loss = T::zero();
    let grad = target
        .data
        .iter()
        .zip(&rendered.data)
        .map(|(&t, &r)| {
            let g = -t + lambda_neg * (T::one() - t);
            loss += g * r;
            g / n
        })
        .collect();
    Ok((loss / n, grad))
}

fn sigmoid_of<T: Scalar>(v: T) -> T {
    v.sigmoid()
}

/// Tight box over the means of splats with `sigmoid(score) > threshold`.
pub fn bbox3d_of_high_scores<T: Scalar>(scene: &SplatScene<T>, threshold: T) -> Result<Aabb<T>> {
    let seg = scene
        .seg
        .as_ref()
        .ok_or_else(|| Error::EmptySelection("scene has no segmentation scores".into()))?;
    let mut bbox: Option<Aabb<T>> = None;
    for (s, &score) in scene.splats.iter().zip(&seg.score) {
        if sigmoid_of(score) > threshold {
            bbox = Some(match bbox {
                None => Aabb { min: s.mean, max: s.mean },
                Some(b) => Aabb {
                    min: b.min.component_min(s.mean),
                    max: b.max.component_max(s.mean),
                },
            });
        }
    }
    bbox.ok_or_else(|| Error::EmptySelection("no splat scores above threshold".into()))
}

/// Final selection: high scores, plus splats inside the high-score box that
/// the dual score rejects, then grown by proximity.
pub fn merge_segmentation<T: Scalar>(scene: &SplatScene<T>, config: &SegmentationConfig) -> Result<SegmentationResult<T>> {
    let seg = scene
        .seg
        .as_ref()
        .ok_or_else(|| Error::EmptySelection("scene has no segmentation scores".into()))?;
    let ts = T::lit(config.score_threshold);
    let td = T::lit(config.dual_threshold);
    let bbox = bbox3d_of_high_scores(scene, ts)?;
    let mut selected: Vec<bool> = seg.score.iter().map(|&s| sigmoid_of(s) > ts).collect();
    if let Some(dual) = &seg.dual_score {
        for (i, s) in scene.splats.iter().enumerate() {
            if !selected[i] && bbox.contains(s.mean) && sigmoid_of(dual[i]) < td {
                selected[i] = true;
            }
        }
    }
    expand_selection(scene, &mut selected, T::lit(config.expansion_factor), config.expansion_fixpoint);
    let selected: Vec<usize> = (0..scene.len()).filter(|&i| selected[i]).collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection("merge produced no splats".into()));
    }
    Ok(SegmentationResult {
        selected,
        bbox3d: bbox,
        view_masks: Vec::new(),
    })
}

/// Adds every unselected splat whose mean lies within `factor ×` (median
/// nearest-neighbour distance of the selection) of a selected mean.
pub fn expand_selection<T: Scalar>(scene: &SplatScene<T>, selected: &mut [bool], factor: T, fixpoint: bool) {
    let sel_means: Vec<Vec3<T>> = scene.splats.iter().zip(selected.iter()).filter(|(_, &s)| s).map(|(s, _)| s.mean).collect();
    let Some(median) = median_nn_distance(&sel_means) else {
        return;
    };
    let radius = factor * median;
    if !(radius > T::zero()) {
        return;
    }
    let r2 = radius * radius;
    let mut frontier = sel_means;
    loop {
        let tree = KdTree::build(&frontier);
        let mut added = Vec::new();
        for (i, s) in scene.splats.iter().enumerate() {
            if !selected[i] && tree.nearest(s.mean, None).is_some_and(|(_, d2)| d2 <= r2) {
                added.push(i);
            }
        }
        for &i in &added {
            selected[i] = true;
        }
        if !fixpoint || added.is_empty() {
            break;
        }
        frontier = added.iter().map(|&i| scene.splats[i].mean).collect();
    }
}

/// Object and background parts of a scene, with their original indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSplit<T> {
    pub object: SplatScene<T>,
    pub background: SplatScene<T>,
    pub object_indices: Vec<usize>,
    pub background_indices: Vec<usize>,
}

pub fn split_scene<T: Scalar>(scene: &SplatScene<T>, result: &SegmentationResult<T>) -> Result<SceneSplit<T>> {
    let mut is_obj = vec![false; scene.len()];
    for &i in &result.selected {
        if i >= scene.len() {
            return Err(Error::InvalidParameter(format!("selected index {i} out of range")));
        }
        is_obj[i] = true;
    }
    let object_indices: Vec<usize> = (0..scene.len()).filter(|&i| is_obj[i]).collect();
    let background_indices: Vec<usize> = (0..scene.len()).filter(|&i| !is_obj[i]).collect();
    Ok(SceneSplit {
        object: scene.subset(&object_indices),
        background: scene.subset(&background_indices),
        object_indices,
        background_indices,
    })
}

/// Renders the binary silhouette of `selected` splats as seen through the
/// whole scene (occluders included).
pub fn render_selection_mask<T: Scalar>(scene: &SplatScene<T>, selected: &[usize], camera: &Camera<T>) -> Result<Mask2D> {
    let mut labelled = scene.clone();
    let seg = labelled.ensure_seg(T::lit(-20.0));
    seg.score.iter_mut().for_each(|s| *s = T::lit(-20.0));
    seg.dual_score = None;
    for &i in selected {
        seg.score[i] = T::lit(20.0);
    }
    let frame = render(&labelled, camera, [T::zero(); 3], Channels::MASK)?;
    Ok(SoftMask {
        width: frame.width,
        height: frame.height,
        data: frame.mask,
    }
    .binarize(T::lit(0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Splat;

    fn soft(v: Vec<f64>) -> SoftMask<f64> {
        SoftMask::new(v.len(), 1, v).unwrap()
    }

    #[test]
    fn loss_examples() {
        let ones = soft(vec![1.0; 8]);
        let zeros = soft(vec![0.0; 8]);
        assert!((mask_loss(&ones, &ones, 1.0).unwrap().0 + 1.0).abs() < 1e-15);
        assert_eq!(mask_loss(&soft(vec![0.3; 8]), &zeros, 1.0).unwrap().0, 0.0);
        let neg = soft(vec![-1.0; 8]);
        assert!((mask_loss(&neg, &ones, 1.0).unwrap().0 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_is_exact() {
        let t = soft(vec![0.0, 1.0, 0.4, -0.7]);
        let r = soft(vec![0.2, 0.9, 0.5, 0.1]);
        let (l0, g) = mask_loss(&t, &r, 0.7).unwrap();
        for i in 0..4 {
            let mut r2 = r.clone();
            r2.data[i] += 0.5;
            let l1 = mask_loss(&t, &r2, 0.7).unwrap().0;
            assert!(((l1 - l0) / 0.5 - g[i]).abs() < 1e-12);
        }
    }

    fn scene_with_scores(pts: &[(f64, f64, f64, f64)]) -> SplatScene<f64> {
        let splats = pts
            .iter()
            .map(|&(x, y, z, _)| Splat::isotropic(Vec3::new(x, y, z), 0.05, 0.5, [0.5; 3]))
            .collect();
        let mut s = SplatScene::from_splats(splats, 0).unwrap();
        s.ensure_seg(0.0).score = pts.iter().map(|p| p.3.logit()).collect();
        s
    }

    #[test]
    fn bbox_examples() {
        let s = scene_with_scores(&[(1.0, 2.0, 3.0, 0.9)]);
        let b = bbox3d_of_high_scores(&s, 0.5).unwrap();
        assert_eq!((b.min, b.max), (Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0)));
        let s = scene_with_scores(&[(0.0, 0.0, 0.0, 0.9), (1.0, 1.0, 1.0, 0.8), (5.0, 5.0, 5.0, 0.2)]);
        let b = bbox3d_of_high_scores(&s, 0.5).unwrap();
        assert_eq!(b.max, Vec3::new(1.0, 1.0, 1.0));
        assert!(bbox3d_of_high_scores(&scene_with_scores(&[(0.0, 0.0, 0.0, 0.1)]), 0.5).is_err());
    }

    #[test]
    fn merge_accepts_dual_rejections() {
        let mut s = scene_with_scores(&[(0.0, 0.0, 0.0, 0.9), (2.0, 0.0, 0.0, 0.9), (1.0, 0.0, 0.0, 0.1), (9.0, 0.0, 0.0, 0.1)]);
        s.seg.as_mut().unwrap().dual_score = Some(vec![0.01f64.logit(), 0.01f64.logit(), 0.05f64.logit(), 0.05f64.logit()]);
        let cfg = SegmentationConfig {
            expansion_factor: 0.0,
            ..Default::default()
        };
        assert_eq!(merge_segmentation(&s, &cfg).unwrap().selected, vec![0, 1, 2]);
    }

    #[test]
    fn expansion_single_pass_and_fixpoint() {
        // selected pair at spacing 1 gives radius 2; a chain continues past it
        let pts = [(0.0, 0.0, 0.0, 0.9), (1.0, 0.0, 0.0, 0.9), (2.0, 0.0, 0.0, 0.1), (3.5, 0.0, 0.0, 0.1), (4.5, 0.0, 0.0, 0.1), (20.0, 0.0, 0.0, 0.1)];
        let s = scene_with_scores(&pts);
        let cfg = SegmentationConfig::default();
        assert_eq!(merge_segmentation(&s, &cfg).unwrap().selected, vec![0, 1, 2]);
        let cfg = SegmentationConfig {
            expansion_fixpoint: true,
            ..Default::default()
        };
        assert_eq!(merge_segmentation(&s, &cfg).unwrap().selected, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn split_partitions() {
        let s = scene_with_scores(&(0..10).map(|i| (i as f64, 0.0, 0.0, 0.5)).collect::<Vec<_>>());
        let r = SegmentationResult {
            selected: vec![1, 3, 5, 7],
            bbox3d: Aabb {
                min: Vec3::zero(),
                max: Vec3::zero(),
            },
            view_masks: vec![],
        };
        let sp = split_scene(&s, &r).unwrap();
        assert_eq!((sp.object.len(), sp.background.len()), (4, 6));
        assert_eq!(sp.background_indices, vec![0, 2, 4, 6, 8, 9]);
        let all = SegmentationResult {
            selected: (0..10).collect(),
            ..r
        };
        assert!(split_scene(&s, &all).unwrap().background.is_empty());
    }
}
