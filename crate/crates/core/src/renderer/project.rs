use crate::math::{Mat3, Vec3};
use crate::scene::{sh, Camera, Splat};
use crate::Scalar;

use super::RenderSettings;

/// A splat after projection into a camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSplat<T> {
    /// Index of the source splat in the scene.
    pub index: usize,
    pub mean2d: [T; 2],
    /// Upper triangle `(a, b, c)` of the dilated 2D covariance.
    pub cov2d: [T; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    /// Channels whose SH evaluation was clamped (zero gradient).
    pub color_clamped: [bool; 3],
    pub alpha_base: T,
    pub mask: T,
    pub dual_mask: T,
    pub radius: T,
    /// Inclusive tile range `[x0, x1] × [y0, y1]`.
    pub tiles: [usize; 4],
}

/// Intermediates shared by projection and its adjoint.
pub(crate) struct Geometry<T> {
    pub p_cam: Vec3<T>,
    pub jw: [[T; 3]; 2],
    pub cov3d: Mat3<T>,
}

pub(crate) fn geometry<T: Scalar>(splat: &Splat<T>, camera: &Camera<T>) -> Geometry<T> {
    let p = camera.world_to_camera(splat.mean);
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let j = [[camera.fx * iz, T::zero(), -camera.fx * x * iz2], [T::zero(), camera.fy * iz, -camera.fy * y * iz2]];
    let w = &camera.rotation.0;
    let mut jw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    Geometry {
        p_cam: p,
        jw,
        cov3d: splat.covariance(),
    }
}

/// `M Σ Mᵀ` for a 2×3 `M`, as `(a, b, c)`.
pub(crate) fn sandwich<T: Scalar>(m: &[[T; 3]; 2], s: &Mat3<T>) -> [T; 3] {
    let mut ms = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ms[r][c] = m[r][0] * s.0[0][c] + m[r][1] * s.0[1][c] + m[r][2] * s.0[2][c];
        }
    }
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    [dot(&ms[0], &m[0]), dot(&ms[0], &m[1]), dot(&ms[1], &m[1])]
}

/// Projects a splat; `None` when it is behind the near plane, degenerate or
/// its 3σ footprint misses the image.
pub fn project_splat<T: Scalar>(
    index: usize,
    splat: &Splat<T>,
    sh_degree: usize,
    camera: &Camera<T>,
    score: Option<T>,
    dual_score: Option<T>,
    settings: &RenderSettings<T>,
) -> Option<ProjectedSplat<T>> {
    let g = geometry(splat, camera);
    let z = g.p_cam.z;
    if z <= settings.near {
        return None;
    }
    let mean2d = [camera.fx * g.p_cam.x / z + camera.cx, camera.fy * g.p_cam.y / z + camera.cy];
    let [mut a, b, mut c] = sandwich(&g.jw, &g.cov3d);
    a += settings.lowpass;
    c += settings.lowpass;
    let det = a * c - b * b;
    if !(det > T::zero()) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let half = T::lit(0.5);
    let mid = half * (a + c);
    let lambda = mid + (mid * mid - det).max(T::lit(0.1)).sqrt();
    let radius = (T::lit(3.0) * lambda.sqrt()).ceil();
    let (w, h) = (T::from_usize_lossy(camera.width), T::from_usize_lossy(camera.height));
    if mean2d[0] + radius < T::zero() || mean2d[0] - radius > w || mean2d[1] + radius < T::zero() || mean2d[1] - radius > h {
        return None;
    }
    let ts = T::from_usize_lossy(settings.tile_size);
    let tiles_x = camera.width.div_ceil(settings.tile_size);
    let tiles_y = camera.height.div_ceil(settings.tile_size);
    let tile_of = |v: T, n: usize| -> usize {
        let t = (v / ts).floor();
        if t < T::zero() {
            0
        } else {
            t.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    };
    let tiles = [
        tile_of(mean2d[0] - radius, tiles_x),
        tile_of(mean2d[1] - radius, tiles_y),
        tile_of(mean2d[0] + radius, tiles_x),
        tile_of(mean2d[1] + radius, tiles_y),
    ];

    let dir = (splat.mean - camera.center()).normalized();
    let raw = sh::evaluate_raw(&splat.sh, dir);
    let clamp01 = |v: T| v.max(T::zero()).min(T::one());
    let color = raw.map(clamp01);
    let color_clamped = raw.map(|v| v < T::zero() || v > T::one());
    debug_assert_eq!(splat.sh.len(), sh::coeff_count(sh_degree));

    Some(ProjectedSplat {
        index,
        mean2d,
        cov2d: [a, b, c],
        conic,
        depth: z,
        color,
        color_clamped,
        alpha_base: splat.opacity(),
        mask: score.map(T::sigmoid).unwrap_or(T::zero()),
        dual_mask: dual_score.map(T::sigmoid).unwrap_or(T::zero()),
        radius,
        tiles,
    })
}
