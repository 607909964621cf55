//! Rigid manipulation of a selected object and recomposition with the
//! background. Nothing here trains; edits are pure parameter maps.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::math::{Quat, Vec3};
use crate::scene::SplatScene;
use crate::segmentation::SceneSplit;
use crate::{Error, Result, Scalar};

/// Wire form of a transform: `{"quaternion": [w,x,y,z], "translation": [x,y,z], "scale": s}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

/// `p ↦ rotation · (scale · p) + translation`.
///
/// Uniform scale goes beyond plain rigid motion; it is kept because it is
/// cheap and convenient when placing an object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Quat<T>,
    pub translation: Vec3<T>,
    pub scale: T,
}

impl<T: Scalar> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zero(),
            scale: T::one(),
        }
    }

    /// Normalizes the rotation; rejects a zero or non-finite quaternion and
    /// non-positive scale.
    pub fn new(rotation: Quat<T>, translation: Vec3<T>, scale: T) -> Result<Self> {
        let n = rotation.norm();
        if !rotation.is_finite() || !(n > T::zero()) {
            return Err(Error::InvalidParameter("transform rotation must be a nonzero finite quaternion".into()));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidParameter("transform translation must be finite".into()));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::InvalidParameter("transform scale must be positive".into()));
        }
        let rotation = if (n - T::one()).abs() > T::lit(1e-6) { rotation.normalized() } else { rotation };
        Ok(Self { rotation, translation, scale })
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn rotation(q: Quat<T>) -> Self {
        Self {
            rotation: q.normalized(),
            ..Self::identity()
        }
    }

    pub fn apply_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.rotate(p * self.scale) + self.translation
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Self {
        Self {
            rotation: self.rotation.mul(first.rotation).normalized(),
            translation: self.rotation.rotate(first.translation * self.scale) + self.translation,
            scale: self.scale * first.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.conjugate();
        let s = T::one() / self.scale;
        Self {
            rotation: inv,
            translation: inv.rotate(self.translation) * (-s),
            scale: s,
        }
    }

    pub fn to_record(&self) -> TransformRecord {
        TransformRecord {
            quaternion: self.rotation.to_array().map(|v| v.to_f64_lossy()),
            translation: self.translation.to_array().map(|v| v.to_f64_lossy()),
            scale: (self.scale != T::one()).then(|| self.scale.to_f64_lossy()),
        }
    }

    pub fn from_record(r: &TransformRecord) -> Result<Self> {
        Self::new(
            Quat::from_array(r.quaternion.map(T::lit)),
            Vec3::from_array(r.translation.map(T::lit)),
            T::lit(r.scale.unwrap_or(1.0)),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: TransformRecord = serde_json::from_str(text)?;
        Self::from_record(&rec)
    }
}

/// Moves every splat of `object` by `t`. Opacity and SH coefficients are
/// left alone, so view-dependent colour (degree ≥ 1) keeps its world
/// orientation.
pub fn transform_object<T: Scalar>(object: &SplatScene<T>, t: &RigidTransform<T>) -> SplatScene<T> {
    let mut out = object.clone();
    let log_s = t.scale.ln();
    for s in &mut out.splats {
        s.mean = t.apply_point(s.mean);
        s.rotation = t.rotation.mul(s.rotation);
        s.renormalize();
        s.log_scale = s.log_scale + Vec3::splat(log_s);
    }
    out
}

/// Background splats followed by object splats. Segmentation attributes
/// survive only when both parts carry them.
pub fn recompose<T: Scalar>(background: &SplatScene<T>, object: &SplatScene<T>) -> Result<SplatScene<T>> {
    if object.is_empty() {
        return Ok(background.clone());
    }
    if background.is_empty() {
        return Ok(object.clone());
    }
    if background.sh_degree != object.sh_degree {
        return Err(Error::Shape(format!("SH degree {} vs {}", background.sh_degree, object.sh_degree)));
    }
    let mut out = background.clone();
    out.splats.extend(object.splats.iter().cloned());
    out.seg = match (&background.seg, &object.seg) {
        (Some(a), Some(b)) => {
            let mut seg = a.clone();
            seg.score.extend(&b.score);
            seg.dual_score = match (&a.dual_score, &b.dual_score) {
                (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
                _ => None,
            };
            Some(seg)
        }
        _ => None,
    };
    Ok(out)
}

/// Live editing state: a fixed background, the object in its original
/// pose, and the transform currently applied to it. The composite is
/// rebuilt lazily and handed out as an immutable snapshot, so a reader
/// never sees a half-applied edit.
#[derive(Clone, Debug)]
pub struct EditSession<T> {
    background: SplatScene<T>,
    object: SplatScene<T>,
    transform: RigidTransform<T>,
    object_visible: bool,
    composite: Option<Arc<SplatScene<T>>>,
    revision: u64,
}

impl<T: Scalar> EditSession<T> {
    pub fn new(background: SplatScene<T>, object: SplatScene<T>) -> Result<Self> {
        if !background.is_empty() && !object.is_empty() && background.sh_degree != object.sh_degree {
            return Err(Error::Shape("background and object SH degrees differ".into()));
        }
        Ok(Self {
            background,
            object,
            transform: RigidTransform::identity(),
            object_visible: true,
            composite: None,
            revision: 0,
        })
    }

    /// Session from a split whose background was replaced by `background`
    /// (typically the inpainted one). Index sets of the split must be
    /// disjoint.
    pub fn from_split(split: &SceneSplit<T>, background: SplatScene<T>) -> Result<Self> {
        let mut seen = vec![false; split.object_indices.len() + split.background_indices.len()];
        for &i in split.object_indices.iter().chain(&split.background_indices) {
            match seen.get_mut(i) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::InvalidParameter(format!("object and background overlap at splat {i}"))),
            }
        }
        Self::new(background, split.object.clone())
    }

    pub fn background(&self) -> &SplatScene<T> {
        &self.background
    }

    pub fn object(&self) -> &SplatScene<T> {
        &self.object
    }

    pub fn transform(&self) -> &RigidTransform<T> {
        &self.transform
    }

    pub fn object_visible(&self) -> bool {
        self.object_visible
    }

    /// Bumped by every state change.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn is_cached(&self) -> bool {
        self.composite.is_some()
    }

    fn invalidate(&mut self) {
        self.composite = None;
        self.revision += 1;
    }

    /// Replaces the current transform.
    pub fn set_transform(&mut self, t: RigidTransform<T>) {
        self.transform = t;
        self.invalidate();
    }

    /// Applies `t` after the current transform.
    pub fn apply_incremental(&mut self, t: &RigidTransform<T>) {
        self.transform = t.compose(&self.transform);
        self.invalidate();
    }

    /// Drops the object from the composite and returns the background.
    pub fn remove_object(&mut self) -> SplatScene<T> {
        if self.object_visible {
            self.object_visible = false;
            self.invalidate();
        }
        self.background.clone()
    }

    pub fn restore_object(&mut self) {
        if !self.object_visible {
            self.object_visible = true;
            self.invalidate();
        }
    }

    pub fn transformed_object(&self) -> SplatScene<T> {
        transform_object(&self.object, &self.transform)
    }

    /// Current composite, rebuilt only after a change.
    pub fn composite(&mut self) -> Result<Arc<SplatScene<T>>> {
        if let Some(c) = &self.composite {
            return Ok(c.clone());
        }
        let scene = if self.object_visible {
            recompose(&self.background, &self.transformed_object())?
        } else {
            self.background.clone()
        };
        let c = Arc::new(scene);
        self.composite = Some(c.clone());
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use crate::renderer::{render, Channels};
    use crate::scene::{covariance_from, Camera, Splat};
    use proptest::prelude::*;

    fn quat_z90() -> Quat<f64> {
        Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2)
    }

    fn object() -> SplatScene<f64> {
        let mut s1 = Splat::isotropic(Vec3::new(0.1, -0.2, 0.3), 0.05, 0.7, [0.8, 0.2, 0.1]);
        s1.set_scale(Vec3::new(2.0, 1.0, 1.0));
        let mut s2 = Splat::isotropic(Vec3::new(-0.4, 0.5, 1.0), 0.1, 0.4, [0.1, 0.9, 0.3]);
        s2.rotation = Quat::new(0.9, 0.1, -0.3, 0.2).normalized();
        SplatScene::from_splats(vec![s1, s2], 0).unwrap()
    }

    // explicit 3×3 products, independent of Mat3
    fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn transpose(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
    }

    #[test]
    fn identity_is_bit_identical() {
        let o = object();
        assert_eq!(transform_object(&o, &RigidTransform::identity()), o);
    }

    #[test]
    fn translation_moves_means_only() {
        let o = object();
        let out = transform_object(&o, &RigidTransform::translation(Vec3::new(1.0, 0.0, 0.0)));
        for (a, b) in out.splats.iter().zip(&o.splats) {
            assert!((a.mean - b.mean - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
            assert!(a.covariance().max_abs_diff(&b.covariance()) < 1e-15);
            assert_eq!(a.sh, b.sh);
            assert_eq!(a.opacity_logit, b.opacity_logit);
        }
    }

    #[test]
    fn z_rotation_swaps_covariance_axes() {
        let o = object();
        let out = transform_object(&o, &RigidTransform::rotation(quat_z90()));
        let rz = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let sigma = covariance_from(o.splats[0].rotation, o.splats[0].scale()).unwrap().0;
        let expected = mat_mul(mat_mul(rz, sigma), transpose(rz));
        let got = out.splats[0].covariance().0;
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
        assert!((got[0][0] - 1.0).abs() < 1e-12 && (got[1][1] - 4.0).abs() < 1e-12 && (got[2][2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_scale_multiplies_scale() {
        let o = object();
        let t = RigidTransform::new(Quat::identity(), Vec3::zero(), 2.5).unwrap();
        let out = transform_object(&o, &t);
        for (a, b) in out.splats.iter().zip(&o.splats) {
            assert!((a.scale() - b.scale() * 2.5).norm() < 1e-12);
            assert!((a.mean - b.mean * 2.5).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_transforms() {
        assert!(RigidTransform::<f64>::new(Quat::new(0.0, 0.0, 0.0, 0.0), Vec3::zero(), 1.0).is_err());
        assert!(RigidTransform::<f64>::new(Quat::identity(), Vec3::zero(), 0.0).is_err());
        assert!(RigidTransform::<f64>::new(Quat::identity(), Vec3::new(f64::NAN, 0.0, 0.0), 1.0).is_err());
        assert!(RigidTransform::<f64>::from_json(r#"{"quaternion":[1,0,0],"translation":[0,0,0]}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = RigidTransform::new(Quat::new(0.5, 0.5, -0.5, 0.5), Vec3::new(1.0, 2.0, 3.0), 1.5).unwrap();
        let text = serde_json::to_string(&t.to_record()).unwrap();
        assert_eq!(RigidTransform::<f64>::from_json(&text).unwrap(), t);
        let plain = RigidTransform::<f64>::from_json(r#"{"quaternion":[2,0,0,0],"translation":[0,1,0]}"#).unwrap();
        assert_eq!(plain.rotation, Quat::identity());
        assert_eq!(plain.scale, 1.0);
    }

    fn cam() -> Camera<f64> {
        Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 32, 32, 0.9).unwrap()
    }

    fn background() -> SplatScene<f64> {
        let splats = (0..6)
            .map(|i| Splat::isotropic(Vec3::new(-0.6 + 0.25 * i as f64, 0.3, 1.5 + 0.1 * i as f64), 0.2, 0.6, [0.2, 0.3, 0.9]))
            .collect();
        SplatScene::from_splats(splats, 0).unwrap()
    }

    #[test]
    fn recompose_examples() {
        let bg = background();
        assert_eq!(recompose(&bg, &SplatScene::new(0)).unwrap(), bg);
        let all = recompose(&bg, &object()).unwrap();
        assert_eq!(all.len(), bg.len() + 2);

        // split then recompose renders like the original
        let result = crate::segmentation::SegmentationResult {
            selected: vec![1, 3, 6],
            bbox3d: crate::segmentation::Aabb { min: Vec3::zero(), max: Vec3::zero() },
            view_masks: vec![],
        };
        let split = crate::segmentation::split_scene(&all, &result).unwrap();
        let back = recompose(&split.background, &transform_object(&split.object, &RigidTransform::identity())).unwrap();
        let a = render(&all, &cam(), [0.0; 3], Channels::COLOR | Channels::DEPTH).unwrap();
        let b = render(&back, &cam(), [0.0; 3], Channels::COLOR | Channels::DEPTH).unwrap();
        for (x, y) in a.color.iter().zip(&b.color) {
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() < 1e-6);
            }
        }

        // object pushed behind the camera is culled
        let gone = transform_object(&object(), &RigidTransform::translation(Vec3::new(0.0, 0.0, -50.0)));
        let c = render(&recompose(&bg, &gone).unwrap(), &cam(), [0.0; 3], Channels::COLOR).unwrap();
        let d = render(&bg, &cam(), [0.0; 3], Channels::COLOR).unwrap();
        assert_eq!(c.color, d.color);
    }

    #[test]
    fn session_remove_and_cache() {
        let mut s = EditSession::new(background(), object()).unwrap();
        assert!(!s.is_cached());
        let c0 = s.composite().unwrap();
        assert!(s.is_cached());
        assert!(Arc::ptr_eq(&c0, &s.composite().unwrap()));
        s.set_transform(RigidTransform::translation(Vec3::new(0.2, 0.0, 0.0)));
        assert!(!s.is_cached());
        let bg1 = s.remove_object();
        let rev = s.revision();
        let bg2 = s.remove_object();
        assert_eq!(bg1, bg2);
        assert_eq!(rev, s.revision());
        assert_eq!(*s.composite().unwrap(), background());
        let frame = render(&s.composite().unwrap(), &cam(), [0.0; 3], Channels::COLOR).unwrap();
        assert_eq!(frame, render(&background(), &cam(), [0.0; 3], Channels::COLOR).unwrap());
        s.restore_object();
        assert_eq!(s.composite().unwrap().len(), 8);
    }

    #[test]
    fn from_split_rejects_overlap() {
        let split = SceneSplit {
            object: object(),
            background: background(),
            object_indices: vec![0, 1],
            background_indices: vec![1, 2],
        };
        assert!(EditSession::from_split(&split, background()).is_err());
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform<f64>> {
        (prop::array::uniform4(-1.0f64..1.0), prop::array::uniform3(-2.0f64..2.0), 0.5f64..2.0)
            .prop_filter("nonzero quaternion", |(q, _, _)| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
            .prop_map(|(q, t, s)| RigidTransform::new(Quat::from_array(q), Vec3::from_array(t), s).unwrap())
    }

    fn close(a: &SplatScene<f64>, b: &SplatScene<f64>) -> bool {
        a.splats.iter().zip(&b.splats).all(|(x, y)| {
            let q = if x.rotation.to_array().iter().zip(y.rotation.to_array()).map(|(u, v)| u * v).sum::<f64>() < 0.0 {
                y.rotation.neg()
            } else {
                y.rotation
            };
            (x.mean - y.mean).norm() < 1e-6
                && x.rotation.to_array().iter().zip(q.to_array()).all(|(u, v)| (u - v).abs() < 1e-6)
                && (x.log_scale - y.log_scale).norm() < 1e-6
                && x.sh == y.sh
                && x.opacity_logit == y.opacity_logit
        })
    }

    proptest! {
        #[test]
        fn composition_matches_sequential(t1 in arb_transform(), t2 in arb_transform()) {
            let o = object();
            let seq = transform_object(&transform_object(&o, &t1), &t2);
            let once = transform_object(&o, &t2.compose(&t1));
            prop_assert!(close(&seq, &once));
            prop_assert_eq!(seq.len(), o.len());
        }

        #[test]
        fn inverse_undoes(t in arb_transform()) {
            let o = object();
            let back = transform_object(&transform_object(&o, &t), &t.inverse());
            prop_assert!(close(&back, &o));
        }

        #[test]
        fn rotation_matches_matrix(t in arb_transform(), p in prop::array::uniform3(-3.0f64..3.0)) {
            let r: Mat3<f64> = t.rotation.to_rotation();
            let q = t.apply_point(Vec3::from_array(p));
            let m = r.mul_vec(Vec3::from_array(p) * t.scale) + t.translation;
            prop_assert!((q - m).norm() < 1e-12);
            prop_assert!(r.is_rotation(1e-9));
        }
    }
}
