//! Small fixed-size linear algebra used by the scene and the rasterizer.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn component_min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn component_max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let z = T::zero();
        Mat3([[d.x, z, z], [z, d.y, z], [z, z, d.z]])
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    #[inline]
    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        r
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] += o.0[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        r.0.iter_mut().flatten().for_each(|v| *v *= s);
        r
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }

    /// True when `MᵀM = I` and `det M = +1` within `tol`.
    pub fn is_rotation(&self, tol: T) -> bool {
        let rtr = self.transpose().mul_mat(self);
        rtr.max_abs_diff(&Self::identity()) <= tol && (self.determinant() - T::one()).abs() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let half = angle * T::lit(0.5);
        let s = half.sin();
        Self::new(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let inv = T::one() / self.norm();
        Self::new(self.w * inv, self.x * inv, self.y * inv, self.z * inv)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Hamilton product `self * o` (apply `o` first, then `self`).
    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_rotation(self) -> Mat3<T> {
        let q = self.normalized();
        rotation_from_unit(q)
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        self.to_rotation().mul_vec(v)
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_rotation(m: &Mat3<T>) -> Self {
        let m = &m.0;
        let (one, two, quarter) = (T::one(), T::lit(2.0), T::lit(0.25));
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * two;
            Self::new(quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * two;
            Self::new((m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * two;
            Self::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * two;
            Self::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s)
        };
        q.normalized()
    }

    pub fn cast<U: Scalar>(self) -> Quat<U> {
        Quat::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

#[inline]
pub(crate) fn rotation_from_unit<T: Scalar>(q: Quat<T>) -> Mat3<T> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let one = T::one();
    let two = T::lit(2.0);
    Mat3([
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ])
}

/// Gradient of a loss w.r.t. the unit quaternion given its gradient w.r.t.
/// the rotation matrix built by [`rotation_from_unit`].
pub(crate) fn rotation_grad_to_unit_quat<T: Scalar>(q: Quat<T>, g: &Mat3<T>) -> [T; 4] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let g = &g.0;
    let two = T::lit(2.0);
    let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - two * x * g[2][2]);
    let dy = two
        * (-two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - two * y * g[2][2]);
    let dz = two
        * (-two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1] + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    [dw, dx, dy, dz]
}

/// Chain rule through `q ↦ q / |q|`.
pub(crate) fn normalize_quat_grad<T: Scalar>(raw: Quat<T>, g_unit: [T; 4]) -> [T; 4] {
    let n = raw.norm();
    let u = raw.normalized().to_array();
    let proj = u[0] * g_unit[0] + u[1] * g_unit[1] + u[2] * g_unit[2] + u[3] * g_unit[3];
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = (g_unit[i] - u[i] * proj) / n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quaternion_matrix_roundtrip() {
        let q = Quat::new(0.3f64, -0.2, 0.7, 0.1).normalized();
        let m = q.to_rotation();
        assert!(m.is_rotation(1e-12));
        let back = Quat::from_rotation(&m);
        let same = back.to_array().iter().zip(q.to_array()).all(|(a, b)| (a - b).abs() < 1e-12);
        let flipped = back.to_array().iter().zip(q.neg().to_array()).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(same || flipped);
    }

    #[test]
    fn hamilton_product_composes_rotations() {
        let a = Quat::from_axis_angle(Vec3::new(0.0f64, 0.0, 1.0), FRAC_PI_2);
        let b = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), FRAC_PI_2);
        let v = Vec3::new(0.2, -0.5, 0.9);
        let lhs = a.mul(b).rotate(v);
        let rhs = a.rotate(b.rotate(v));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn quat_gradient_matches_finite_difference() {
        let q = Quat::new(0.5f64, -0.3, 0.2, 0.6);
        // loss = <G, R(q/|q|)>
        let g = Mat3([[0.3, -1.0, 0.2], [0.7, 0.1, -0.4], [0.05, 0.9, -0.6]]);
        let loss = |q: Quat<f64>| {
            let r = q.to_rotation();
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| g.0[i][j] * r.0[i][j]).sum::<f64>()
        };
        let analytic = normalize_quat_grad(q, rotation_grad_to_unit_quat(q.normalized(), &g));
        let h = 1e-6;
        for k in 0..4 {
            let mut p = q.to_array();
            let mut m = q.to_array();
            p[k] += h;
            m[k] -= h;
            let fd = (loss(Quat::from_array(p)) - loss(Quat::from_array(m))) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "component {k}: fd {fd} analytic {}", analytic[k]);
        }
    }
}
