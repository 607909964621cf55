//! Real spherical-harmonics colour evaluation (degree 0–3), matching the
//! basis and sign conventions used by common splat exporters.

use crate::math::Vec3;
use crate::{Error, Result, Scalar};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of coefficients per colour channel for a degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree from a per-channel coefficient count.
pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

/// DC coefficient that produces `rgb` for a degree-0 splat.
pub fn rgb_to_dc<T: Scalar>(rgb: T) -> T {
    (rgb - T::lit(0.5)) / T::lit(SH_C0)
}

pub fn dc_to_rgb<T: Scalar>(dc: T) -> T {
    dc * T::lit(SH_C0) + T::lit(0.5)
}

/// Evaluates the 16 basis functions at a unit direction.
pub fn basis<T: Scalar>(d: Vec3<T>) -> [T; 16] {
    let (x, y, z) = (d.x, d.y, d.z);
    let c = |v: f64| T::lit(v);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let two = c(2.0);
    let three = c(3.0);
    let four = c(4.0);
    [
        c(SH_C0),
        -c(SH_C1) * y,
        c(SH_C1) * z,
        -c(SH_C1) * x,
        c(SH_C2[0]) * x * y,
        c(SH_C2[1]) * y * z,
        c(SH_C2[2]) * (two * zz - xx - yy),
        c(SH_C2[3]) * x * z,
        c(SH_C2[4]) * (xx - yy),
        c(SH_C3[0]) * y * (three * xx - yy),
        c(SH_C3[1]) * x * y * z,
        c(SH_C3[2]) * y * (four * zz - xx - yy),
        c(SH_C3[3]) * z * (two * zz - three * xx - three * yy),
        c(SH_C3[4]) * x * (four * zz - xx - yy),
        c(SH_C3[5]) * z * (xx - yy),
        c(SH_C3[6]) * x * (xx - three * yy),
    ]
}

/// Partial derivatives of each basis polynomial w.r.t. (x, y, z).
pub fn basis_gradient<T: Scalar>(d: Vec3<T>) -> [[T; 3]; 16] {
    let (x, y, z) = (d.x, d.y, d.z);
    let c = |v: f64| T::lit(v);
    let z0 = T::zero();
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (c1, c2, c3) = (c(SH_C1), SH_C2.map(c), SH_C3.map(c));
    let n = |v: f64| c(v);
    [
        [z0, z0, z0],
        [z0, -c1, z0],
        [z0, z0, c1],
        [-c1, z0, z0],
        [c2[0] * y, c2[0] * x, z0],
        [z0, c2[1] * z, c2[1] * y],
        [n(-2.0) * c2[2] * x, n(-2.0) * c2[2] * y, n(4.0) * c2[2] * z],
        [c2[3] * z, z0, c2[3] * x],
        [n(2.0) * c2[4] * x, n(-2.0) * c2[4] * y, z0],
        [n(6.0) * c3[0] * x * y, c3[0] * (n(3.0) * xx - n(3.0) * yy), z0],
        [c3[1] * y * z, c3[1] * x * z, c3[1] * x * y],
        [n(-2.0) * c3[2] * x * y, c3[2] * (n(4.0) * zz - xx - n(3.0) * yy), n(8.0) * c3[2] * y * z],
        [n(-6.0) * c3[3] * x * z, n(-6.0) * c3[3] * y * z, c3[3] * (n(6.0) * zz - n(3.0) * xx - n(3.0) * yy)],
        [c3[4] * (n(4.0) * zz - n(3.0) * xx - yy), n(-2.0) * c3[4] * x * y, n(8.0) * c3[4] * x * z],
        [n(2.0) * c3[5] * x * z, n(-2.0) * c3[5] * y * z, c3[5] * (xx - yy)],
        [c3[6] * (n(3.0) * xx - n(3.0) * yy), n(-6.0) * c3[6] * x * y, z0],
    ]
}

/// Unclamped colour `Σ_k basis_k(d)·coeffs_k + 0.5`.
pub fn evaluate_raw<T: Scalar>(coeffs: &[[T; 3]], dir: Vec3<T>) -> [T; 3] {
    let b = basis(dir);
    let half = T::lit(0.5);
    let mut rgb = [half; 3];
    for (k, c) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    rgb
}

/// Evaluates view-dependent colour for `degree`, clamped to [0, 1].
pub fn evaluate_sh<T: Scalar>(coeffs: &[[T; 3]], degree: usize, dir: Vec3<T>) -> Result<[T; 3]> {
    if degree > MAX_SH_DEGREE || coeffs.len() != coeff_count(degree) {
        return Err(Error::Shape(format!(
            "expected {} SH coefficients for degree {degree}, got {}",
            coeff_count(degree),
            coeffs.len()
        )));
    }
    Ok(evaluate_raw(coeffs, dir).map(|v| v.max(T::zero()).min(T::one())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_direction_independent() {
        let dc = [[0.0f64; 3]];
        for d in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.6, -0.8, 0.0)] {
            assert_eq!(evaluate_sh(&dc, 0, d).unwrap(), [0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn degree_one_with_only_dc_matches_degree_zero() {
        let dc = [0.3f64, -0.2, 0.9];
        let mut c1 = vec![[0.0; 3]; 4];
        c1[0] = dc;
        let d = Vec3::new(0.48f64, 0.6, 0.64);
        assert_eq!(evaluate_sh(&c1, 1, d).unwrap(), evaluate_sh(&[dc], 0, d).unwrap());
    }

    #[test]
    fn z_band_difference_between_poles() {
        // Y_1^0 = sqrt(3 / 4π) z, so +z and -z differ by 2·coeff·sqrt(3/4π).
        let coeff = 0.2f64;
        let mut c = vec![[0.0; 3]; 4];
        c[2] = [coeff; 3];
        let up = evaluate_sh(&c, 1, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let down = evaluate_sh(&c, 1, Vec3::new(0.0, 0.0, -1.0)).unwrap();
        let norm = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!((up[0] - down[0] - 2.0 * coeff * norm).abs() < 1e-12);
    }

    #[test]
    fn coefficient_count_mismatch_is_shape_error() {
        let c = vec![[0.0f64; 3]; 3];
        assert!(matches!(evaluate_sh(&c, 1, Vec3::new(0.0, 0.0, 1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn basis_gradient_matches_finite_difference() {
        let d = Vec3::new(0.3f64, -0.5, 0.7);
        let g = basis_gradient(d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d.to_array();
            let mut m = d.to_array();
            p[axis] += h;
            m[axis] -= h;
            let bp = basis(Vec3::from_array(p));
            let bm = basis(Vec3::from_array(m));
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }
}
