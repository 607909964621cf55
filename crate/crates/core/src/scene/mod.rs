//! Scene data model: splats, segmentation attributes, cameras and PLY I/O.

pub mod camera;
pub mod ply;
pub mod sh;

pub use camera::{load_cameras, save_cameras, Camera, CameraRecord};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use sh::evaluate_sh;

use crate::math::{Mat3, Quat, Vec3};
use crate::{Error, Result, Scalar};

/// One anisotropic Gaussian primitive.
///
/// Scale is stored as its natural logarithm and opacity as a logit, so both
/// stay unconstrained under gradient descent and survive PLY round-trips
/// bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat<T> {
    pub mean: Vec3<T>,
    pub rotation: Quat<T>,
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    /// `(degree+1)²` RGB coefficient triples; index 0 is the DC term.
    pub sh: Vec<[T; 3]>,
}

impl<T: Scalar> Splat<T> {
    /// Degree-0 splat with an isotropic scale and a plain RGB colour.
    pub fn isotropic(mean: Vec3<T>, scale: T, opacity: T, rgb: [T; 3]) -> Self {
        Self {
            mean,
            rotation: Quat::identity(),
            log_scale: Vec3::splat(scale.ln()),
            opacity_logit: opacity.logit(),
            sh: vec![rgb.map(sh::rgb_to_dc)],
        }
    }

    pub fn scale(&self) -> Vec3<T> {
        self.log_scale.map(T::exp)
    }

    pub fn set_scale(&mut self, s: Vec3<T>) {
        self.log_scale = s.map(T::ln);
    }

    pub fn opacity(&self) -> T {
        self.opacity_logit.sigmoid()
    }

    pub fn set_opacity(&mut self, a: T) {
        self.opacity_logit = a.logit();
    }

    pub fn dc(&self) -> [T; 3] {
        self.sh[0]
    }

    /// Renormalizes the rotation when it drifted from unit length.
    pub fn renormalize(&mut self) {
        let n = self.rotation.norm();
        if (n - T::one()).abs() > T::lit(1e-6) {
            self.rotation = self.rotation.normalized();
        }
    }

    pub fn covariance(&self) -> Mat3<T> {
        covariance_unchecked(self.rotation, self.scale())
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite()
            && self.rotation.is_finite()
            && self.log_scale.is_finite()
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Splat<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Splat {
            mean: self.mean.cast(),
            rotation: self.rotation.cast(),
            log_scale: self.log_scale.cast(),
            opacity_logit: c(self.opacity_logit),
            sh: self.sh.iter().map(|k| k.map(c)).collect(),
        }
    }
}

/// `Σ = R S Sᵀ Rᵀ` for a (possibly unnormalized) quaternion and positive
/// per-axis scale.
pub fn covariance_from<T: Scalar>(rotation: Quat<T>, scale: Vec3<T>) -> Result<Mat3<T>> {
    if !rotation.is_finite() || !scale.is_finite() {
        return Err(Error::InvalidParameter("non-finite rotation or scale".into()));
    }
    if rotation.norm() == T::zero() {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    if !(scale.x > T::zero() && scale.y > T::zero() && scale.z > T::zero()) {
        return Err(Error::InvalidParameter("scale components must be positive".into()));
    }
    Ok(covariance_unchecked(rotation, scale))
}

pub(crate) fn covariance_unchecked<T: Scalar>(rotation: Quat<T>, scale: Vec3<T>) -> Mat3<T> {
    let r = rotation.to_rotation();
    let m = r.mul_mat(&Mat3::diag(scale));
    m.mul_mat(&m.transpose())
}

/// Per-splat segmentation logits, aligned index-for-index with the splats.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SegmentationAttributes<T> {
    pub score: Vec<T>,
    pub dual_score: Option<Vec<T>>,
}

impl<T: Scalar> SegmentationAttributes<T> {
    pub fn new(len: usize, init_logit: T) -> Self {
        Self {
            score: vec![init_logit; len],
            dual_score: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatScene<T> {
    pub splats: Vec<Splat<T>>,
    pub sh_degree: usize,
    pub seg: Option<SegmentationAttributes<T>>,
}

impl<T: Scalar> SplatScene<T> {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            splats: Vec::new(),
            sh_degree,
            seg: None,
        }
    }

    pub fn from_splats(splats: Vec<Splat<T>>, sh_degree: usize) -> Result<Self> {
        let scene = Self {
            splats,
            sh_degree,
            seg: None,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!("sh degree {} exceeds 3", self.sh_degree)));
        }
        let want = sh::coeff_count(self.sh_degree);
        if let Some(i) = self.splats.iter().position(|s| s.sh.len() != want) {
            return Err(Error::Shape(format!(
                "splat {i} has {} SH coefficients, scene degree needs {want}",
                self.splats[i].sh.len()
            )));
        }
        if let Some(seg) = &self.seg {
            if seg.score.len() != self.len() || seg.dual_score.as_ref().is_some_and(|d| d.len() != self.len()) {
                return Err(Error::Shape("segmentation attributes not aligned with splats".into()));
            }
        }
        Ok(())
    }

    /// Attaches segmentation scores (all at `init_logit`) if absent.
    pub fn ensure_seg(&mut self, init_logit: T) -> &mut SegmentationAttributes<T> {
        let n = self.len();
        self.seg.get_or_insert_with(|| SegmentationAttributes::new(n, init_logit))
    }

    pub fn score(&self, i: usize) -> Option<T> {
        self.seg.as_ref().map(|s| s.score[i])
    }

    pub fn dual_score(&self, i: usize) -> Option<T> {
        self.seg.as_ref().and_then(|s| s.dual_score.as_ref()).map(|d| d[i])
    }

    /// Appends a splat, extending segmentation attributes with `seg_logit`.
    pub fn push(&mut self, splat: Splat<T>, seg_logit: T) {
        self.splats.push(splat);
        if let Some(seg) = &mut self.seg {
            seg.score.push(seg_logit);
            if let Some(d) = &mut seg.dual_score {
                d.push(seg_logit);
            }
        }
    }

    /// Sub-scene made of the listed splats, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let seg = self.seg.as_ref().map(|s| SegmentationAttributes {
            score: indices.iter().map(|&i| s.score[i]).collect(),
            dual_score: s.dual_score.as_ref().map(|d| indices.iter().map(|&i| d[i]).collect()),
        });
        Self {
            splats: indices.iter().map(|&i| self.splats[i].clone()).collect(),
            sh_degree: self.sh_degree,
            seg,
        }
    }

    /// Axis-aligned bounds of all means, `None` for an empty scene.
    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = self.splats.first()?.mean;
        Some(self.splats.iter().fold((first, first), |(lo, hi), s| (lo.component_min(s.mean), hi.component_max(s.mean))))
    }

    pub fn cast<U: Scalar>(&self) -> SplatScene<U> {
        let c = |v: &T| U::lit(v.to_f64_lossy());
        SplatScene {
            splats: self.splats.iter().map(Splat::cast).collect(),
            sh_degree: self.sh_degree,
            seg: self.seg.as_ref().map(|s| SegmentationAttributes {
                score: s.score.iter().map(c).collect(),
                dual_score: s.dual_score.as_ref().map(|d| d.iter().map(c).collect()),
            }),
        }
    }
}
