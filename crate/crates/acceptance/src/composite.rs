//! Direct evaluation of one pixel of a splat render, written with nalgebra
//! types and dense matrix algebra.
//!
//! Assumes every splat's footprint box covers the pixel; the rasterizer's
//! 3σ cut is not modelled.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

pub const SH_C0: f64 = 0.28209479177387814;
pub const LOWPASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;
pub const NEAR: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct RefSplat {
    pub mean: Vector3<f64>,
    /// `w, x, y, z`, not necessarily unit.
    pub quat: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub dc: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct RefCamera {
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    /// World to camera.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefPixel {
    pub color: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

struct Layer {
    z: f64,
    alpha: f64,
    color: [f64; 3],
}

fn layer(s: &RefSplat, cam: &RefCamera, pixel: Vector2<f64>) -> Option<Layer> {
    let p = cam.rotation * s.mean + cam.translation;
    if p.z <= NEAR {
        return None;
    }
    let [fx, fy] = cam.focal;
    let mu = Vector2::new(fx * p.x / p.z + cam.principal[0], fy * p.y / p.z + cam.principal[1]);
    let j = Matrix2x3::new(fx / p.z, 0.0, -fx * p.x / (p.z * p.z), 0.0, fy / p.z, -fy * p.y / (p.z * p.z));
    let [w, x, y, z] = s.quat;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner();
    let sigma = r * Matrix3::from_diagonal(&s.scale.component_mul(&s.scale)) * r.transpose();
    let jw = j * cam.rotation;
    let cov = jw * sigma * jw.transpose() + Matrix2::identity() * LOWPASS;
    let d = pixel - mu;
    let maha = (d.transpose() * cov.try_inverse()? * d)[(0, 0)];
    let alpha = (s.opacity * (-0.5 * maha).exp()).min(ALPHA_MAX);
    if alpha < ALPHA_MIN {
        return None;
    }
    Some(Layer {
        z: p.z,
        alpha,
        color: s.dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0)),
    })
}

/// Colour, normalized depth and accumulated alpha at pixel `(x, y)`,
/// sampled at the pixel centre.
pub fn composite_pixel(splats: &[RefSplat], cam: &RefCamera, x: usize, y: usize, background: [f64; 3]) -> RefPixel {
    let centre = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
    let mut layers: Vec<Layer> = splats.iter().filter_map(|s| layer(s, cam, centre)).collect();
    layers.sort_by(|a, b| a.z.total_cmp(&b.z));
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    for l in &layers {
        let w = l.alpha * t;
        for c in 0..3 {
            color[c] += w * l.color[c];
        }
        depth += w * l.z;
        t *= 1.0 - l.alpha;
        if t < T_MIN {
            break;
        }
    }
    for c in 0..3 {
        color[c] += t * background[c];
    }
    let acc = 1.0 - t;
    RefPixel {
        color,
        depth: if acc > 0.5 { depth / acc } else { depth },
        acc,
    }
}
