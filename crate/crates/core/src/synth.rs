//! Deterministic synthetic scenes with per-splat labels, a camera ring and
//! the matching scene with target objects removed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::scene::{sh, Camera, Splat, SplatScene};
use crate::{Error, Result, Scalar};

pub const SYNTH_SPEC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Horizontal plane (normal +z) sampled on a jittered grid.
    Plane {
        center: [f64; 3],
        size: [f64; 2],
        spacing: f64,
        /// Disc of the plane left empty in the scene but present in the
        /// object-free ground truth.
        #[serde(default)]
        hole: Option<Hole>,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        count: usize,
        /// Extra splats filling the interior.
        #[serde(default)]
        interior_count: usize,
    },
    /// Axis-aligned box surface.
    Box { center: [f64; 3], size: [f64; 3], count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(flatten)]
    pub shape: Primitive,
    pub color: [f64; 3],
    /// When set, colour ramps linearly to this value along `ramp_axis`.
    #[serde(default)]
    pub ramp_to: Option<[f64; 3]>,
    #[serde(default)]
    pub ramp_axis: usize,
    pub label: u32,
    /// Target objects are absent from the ground-truth empty scene.
    #[serde(default)]
    pub target: bool,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
}

fn default_opacity() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub count: usize,
    pub radius: f64,
    /// Camera height above `target` (world z is up).
    pub elevation: f64,
    pub target: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "spec_version")]
    pub v: u32,
    pub seed: u64,
    #[serde(default)]
    pub sh_degree: usize,
    pub objects: Vec<ObjectSpec>,
    pub cameras: RingSpec,
}

fn spec_version() -> u32 {
    SYNTH_SPEC_VERSION
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene<T> {
    pub scene: SplatScene<T>,
    pub labels: Vec<u32>,
    pub cameras: Vec<Camera<T>>,
    /// Non-target objects with holes closed.
    pub empty_scene: SplatScene<T>,
    pub target_labels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub v: u32,
    pub labels: Vec<u32>,
    pub target_labels: Vec<u32>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.v != SYNTH_SPEC_VERSION {
            return bad(&format!("unsupported spec version {}", self.v));
        }
        if self.cameras.count == 0 {
            return bad("at least one camera is required");
        }
        if self.cameras.width == 0 || self.cameras.height == 0 || !(self.cameras.fov_deg > 0.0 && self.cameras.fov_deg < 180.0) {
            return bad("camera resolution and field of view must be positive");
        }
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return bad("sh degree above 3");
        }
        for o in &self.objects {
            let ok = match &o.shape {
                Primitive::Plane { size, spacing, .. } => size[0] > 0.0 && size[1] > 0.0 && *spacing > 0.0,
                Primitive::Sphere { radius, count, .. } => *radius > 0.0 && *count > 0,
                Primitive::Box { size, count, .. } => size.iter().all(|s| *s > 0.0) && *count > 0,
            };
            if !ok || o.ramp_axis > 2 || !(o.opacity > 0.0 && o.opacity < 1.0) {
                return bad("object dimensions, counts and opacity must be positive (opacity below 1)");
            }
        }
        Ok(())
    }

    /// Sphere floating above a colour-ramped plane, seen from a ring level
    /// with the upper half of the sphere.
    pub fn sphere_on_plane(seed: u64, cameras: usize, width: usize) -> Self {
        Self {
            v: SYNTH_SPEC_VERSION,
            seed,
            sh_degree: 0,
            objects: vec![
                ObjectSpec {
                    shape: Primitive::Plane {
                        center: [0.0, 0.0, 0.0],
                        size: [2.2, 2.2],
                        spacing: 0.04,
                        hole: None,
                    },
                    color: [0.2, 0.45, 0.25],
                    ramp_to: Some([0.35, 0.3, 0.6]),
                    ramp_axis: 0,
                    label: 0,
                    target: false,
                    opacity: 0.9,
                },
                ObjectSpec {
                    shape: Primitive::Sphere {
                        center: [0.0, 0.0, 0.75],
                        radius: 0.45,
                        count: 2000,
                        interior_count: 0,
                    },
                    color: [0.9, 0.25, 0.15],
                    ramp_to: Some([0.95, 0.75, 0.2]),
                    ramp_axis: 2,
                    label: 1,
                    target: true,
                    opacity: 0.9,
                },
            ],
            cameras: RingSpec {
                count: cameras,
                radius: 3.0,
                elevation: 0.35,
                target: [0.0, 0.0, 0.55],
                width,
                height: width,
                fov_deg: 50.0,
            },
        }
    }
}

impl SynthSpec {
    /// Box resting on a colour-ramped floor that has a hole under the box,
    /// seen from an elevated ring that keeps the floor behind the box.
    /// Removing the box exposes both floor that was hidden and the hole,
    /// which the empty ground truth fills.
    pub fn box_on_holed_plane(seed: u64, cameras: usize, width: usize) -> Self {
        Self {
            v: SYNTH_SPEC_VERSION,
            seed,
            sh_degree: 0,
            objects: vec![
                ObjectSpec {
                    shape: Primitive::Plane {
                        center: [0.0, 0.0, 0.0],
                        size: [2.0, 2.0],
                        spacing: 0.04,
                        hole: Some(Hole {
                            center: [0.0, 0.0],
                            radius: 0.25,
                        }),
                    },
                    color: [0.15, 0.35, 0.7],
                    ramp_to: Some([0.8, 0.6, 0.2]),
                    ramp_axis: 0,
                    label: 0,
                    target: false,
                    opacity: 0.9,
                },
                ObjectSpec {
                    shape: Primitive::Box {
                        center: [0.0, 0.0, 0.15],
                        size: [0.5, 0.5, 0.3],
                        count: 1000,
                    },
                    color: [0.85, 0.2, 0.2],
                    ramp_to: None,
                    ramp_axis: 2,
                    label: 1,
                    target: true,
                    opacity: 0.9,
                },
            ],
            cameras: RingSpec {
                count: cameras,
                radius: 1.8,
                elevation: 1.5,
                target: [0.0, 0.0, 0.0],
                width,
                height: width,
                fov_deg: 50.0,
            },
        }
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t.clamp(0.0, 1.0))
}

struct Sampled {
    splat: Splat<f64>,
    /// Present only in the ground-truth empty scene.
    gt_only: bool,
}

fn sample_object(o: &ObjectSpec, rng: &mut ChaCha8Rng) -> Vec<Sampled> {
    let mut pts: Vec<(Vec3<f64>, Vec3<f64>, bool)> = Vec::new();
    let (lo, hi): ([f64; 3], [f64; 3]);
    match &o.shape {
        Primitive::Plane {
            center,
            size,
            spacing,
            hole,
        } => {
            let nx = (size[0] / spacing).round().max(1.0) as usize;
            let ny = (size[1] / spacing).round().max(1.0) as usize;
            let s = Vec3::new(0.6 * spacing, 0.6 * spacing, 0.1 * spacing);
            for j in 0..ny {
                for i in 0..nx {
                    let x = center[0] - size[0] / 2.0 + (i as f64 + 0.5) * spacing + rng.gen_range(-0.15..0.15) * spacing;
                    let y = center[1] - size[1] / 2.0 + (j as f64 + 0.5) * spacing + rng.gen_range(-0.15..0.15) * spacing;
                    let in_hole = hole
                        .as_ref()
                        .is_some_and(|h| (x - h.center[0]).powi(2) + (y - h.center[1]).powi(2) <= h.radius * h.radius);
                    pts.push((Vec3::new(x, y, center[2]), s, in_hole));
                }
            }
            lo = [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0, center[2]];
            hi = [center[0] + size[0] / 2.0, center[1] + size[1] / 2.0, center[2]];
        }
        Primitive::Sphere {
            center,
            radius,
            count,
            interior_count,
        } => {
            let c = Vec3::from_array(*center);
            let spacing = (4.0 * std::f64::consts::PI * radius * radius / *count as f64).sqrt();
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for i in 0..*count {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / *count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64 + rng.gen_range(-0.1..0.1);
                let p = Vec3::new(r * phi.cos(), r * phi.sin(), z) * *radius;
                pts.push((c + p, Vec3::splat(0.6 * spacing), false));
            }
            if *interior_count > 0 {
                let vspace = (4.0 / 3.0 * std::f64::consts::PI * radius.powi(3) / *interior_count as f64).cbrt();
                let mut placed = 0;
                while placed < *interior_count {
                    let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    if p.norm() <= 0.85 {
                        pts.push((c + p * *radius, Vec3::splat(0.5 * vspace), false));
                        placed += 1;
                    }
                }
            }
            lo = [center[0] - radius, center[1] - radius, center[2] - radius];
            hi = [center[0] + radius, center[1] + radius, center[2] + radius];
        }
        Primitive::Box { center, size, count } => {
            let area = 2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]);
            let spacing = (area / *count as f64).sqrt();
            let faces = [(0usize, 1usize, 2usize), (1, 2, 0), (0, 2, 1)];
            let face_area = |f: (usize, usize, usize)| size[f.0] * size[f.1];
            for _ in 0..*count {
                let mut pick = rng.gen_range(0.0..area / 2.0);
                let mut face = faces[2];
                for f in faces {
                    if pick < face_area(f) {
                        face = f;
                        break;
                    }
                    pick -= face_area(f);
                }
                let mut p = [0.0; 3];
                p[face.0] = rng.gen_range(-0.5..0.5) * size[face.0];
                p[face.1] = rng.gen_range(-0.5..0.5) * size[face.1];
                p[face.2] = if rng.gen::<bool>() { 0.5 } else { -0.5 } * size[face.2];
                let mut s = [0.6 * spacing; 3];
                s[face.2] = 0.1 * spacing;
                pts.push((Vec3::from_array(p) + Vec3::from_array(*center), Vec3::from_array(s), false));
            }
            lo = std::array::from_fn(|i| center[i] - size[i] / 2.0);
            hi = std::array::from_fn(|i| center[i] + size[i] / 2.0);
        }
    }
    let ax = o.ramp_axis;
    pts.into_iter()
        .map(|(mean, scale, gt_only)| {
            let rgb = match o.ramp_to {
                Some(to) if hi[ax] > lo[ax] => lerp3(o.color, to, (mean[ax] - lo[ax]) / (hi[ax] - lo[ax])),
                _ => o.color,
            };
            let mut s = Splat::isotropic(mean, 1.0, o.opacity, rgb);
            s.set_scale(scale);
            Sampled { splat: s, gt_only }
        })
        .collect()
}

/// Generates the scene; identical specs give identical output.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<SynthScene<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_coeffs = sh::coeff_count(spec.sh_degree);
    let mut scene = SplatScene::new(spec.sh_degree);
    let mut empty = SplatScene::new(spec.sh_degree);
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    for o in &spec.objects {
        if o.target && !targets.contains(&o.label) {
            targets.push(o.label);
        }
        for mut s in sample_object(o, &mut rng) {
            s.splat.sh.resize(n_coeffs, [0.0; 3]);
            let splat = s.splat.cast::<T>();
            if !o.target {
                empty.splats.push(splat.clone());
            }
            if !s.gt_only {
                scene.splats.push(splat);
                labels.push(o.label);
            }
        }
    }
    let r = &spec.cameras;
    let target = Vec3::from_array(r.target).cast::<T>();
    let cameras = (0..r.count)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / r.count as f64;
            let eye = Vec3::new(r.target[0] + r.radius * a.cos(), r.target[1] + r.radius * a.sin(), r.target[2] + r.elevation);
            Camera::look_at(eye.cast(), target, Vec3::new(T::zero(), T::zero(), T::one()), r.width, r.height, T::lit(r.fov_deg.to_radians()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthScene {
        scene,
        labels,
        cameras,
        empty_scene: empty,
        target_labels: targets,
    })
}

impl<T: Scalar> SynthScene<T> {
    /// Indices of splats carrying a target label.
    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.target_labels.contains(&self.labels[i])).collect()
    }

    pub fn label_file(&self) -> LabelFile {
        LabelFile {
            v: SYNTH_SPEC_VERSION,
            labels: self.labels.clone(),
            target_labels: self.target_labels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec::sphere_on_plane(5, 4, 32);
        let a = generate::<f64>(&spec).unwrap();
        let b = generate::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate::<f64>(&SynthSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn sphere_splats_are_labelled() {
        let s = generate::<f64>(&SynthSpec::sphere_on_plane(1, 12, 32)).unwrap();
        assert_eq!(s.cameras.len(), 12);
        assert_eq!(s.target_indices().len(), 2000);
        assert_eq!(s.labels.len(), s.scene.len());
        assert_eq!(s.empty_scene.len(), s.scene.len() - 2000);
        for &i in &s.target_indices() {
            assert!(s.scene.splats[i].mean.z > 0.25);
        }
    }

    #[test]
    fn zero_cameras_rejected() {
        let mut spec = SynthSpec::sphere_on_plane(1, 1, 32);
        spec.cameras.count = 0;
        assert!(matches!(generate::<f64>(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn hole_only_in_scene() {
        let mut spec = SynthSpec::sphere_on_plane(1, 1, 32);
        spec.objects[0].shape = Primitive::Plane {
            center: [0.0; 3],
            size: [1.0, 1.0],
            spacing: 0.1,
            hole: Some(Hole {
                center: [0.0, 0.0],
                radius: 0.25,
            }),
        };
        let s = generate::<f64>(&spec).unwrap();
        assert_eq!(s.empty_scene.len(), 100);
        let plane = s.labels.iter().filter(|&&l| l == 0).count();
        assert!(plane < 100 && plane > 70, "{plane}");
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SynthSpec::sphere_on_plane(9, 12, 64);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SynthSpec>(&text).unwrap(), spec);
    }
}
