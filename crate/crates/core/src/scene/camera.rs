use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};
use crate::{Error, Result, Scalar};

/// Pinhole camera. Pixel `(i, j)` spans `[i, i+1) × [j, j+1)` so its centre
/// sits at `(i + 0.5, j + 0.5)`. Camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    /// World-to-camera translation.
    pub translation: Vec3<T>,
}

impl<T: Scalar> Camera<T> {
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Mat3<T>,
        translation: Vec3<T>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera resolution must be at least 1×1".into()));
        }
        if !self.rotation.is_rotation(T::lit(1e-5)) {
            return Err(Error::InvalidParameter("camera rotation is not orthonormal with det +1".into()));
        }
        Ok(())
    }

    /// Camera with the given horizontal field of view looking from `eye`
    /// towards `target`; `up` is the approximate world up direction.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, width: usize, height: usize, fov_x: T) -> Result<Self> {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.norm() < T::lit(1e-9) {
            right = forward.cross(Vec3::new(T::zero(), T::one(), T::zero()));
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3([right.to_array(), down.to_array(), forward.to_array()]);
        let translation = -rotation.mul_vec(eye);
        let w = T::from_usize_lossy(width);
        let h = T::from_usize_lossy(height);
        let f = w * T::lit(0.5) / (fov_x * T::lit(0.5)).tan();
        Self::new(f, f, w * T::lit(0.5), h * T::lit(0.5), width, height, rotation, translation)
    }

    /// World-space position of the camera centre.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn camera_to_world(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Camera-space point at depth `z` behind pixel coordinate `(u, v)`.
    pub fn unproject(&self, u: T, v: T, z: T) -> Vec3<T> {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Composes the pose with a world transform: the returned camera sees
    /// `x` exactly as `self` saw `inverse(x)`. `rotation`/`translation`
    /// describe the forward world map `x ↦ R x + t`.
    pub fn with_world_transform(&self, rotation: &Mat3<T>, translation: Vec3<T>) -> Self {
        let rt = rotation.transpose();
        let mut cam = self.clone();
        cam.rotation = self.rotation.mul_mat(&rt);
        cam.translation = self.translation - cam.rotation.mul_vec(translation);
        cam
    }

    pub fn cast<U: Scalar>(&self) -> Camera<U> {
        let mut r = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = U::lit(self.rotation.0[i][j].to_f64_lossy());
            }
        }
        Camera {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
            width: self.width,
            height: self.height,
            rotation: Mat3(r),
            translation: self.translation.cast(),
        }
    }

    pub fn to_record(&self) -> CameraRecord {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.rotation.0[i][j].to_f64_lossy();
            }
            m[i][3] = self.translation[i].to_f64_lossy();
        }
        m[3][3] = 1.0;
        CameraRecord {
            fx: self.fx.to_f64_lossy(),
            fy: self.fy.to_f64_lossy(),
            cx: self.cx.to_f64_lossy(),
            cy: self.cy.to_f64_lossy(),
            width: self.width,
            height: self.height,
            world_to_camera: m,
        }
    }

    pub fn from_record(r: &CameraRecord) -> Result<Self> {
        let m = &r.world_to_camera;
        let last = m[3];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidParameter("world_to_camera last row must be [0,0,0,1]".into()));
        }
        let mut rot = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = T::lit(m[i][j]);
            }
        }
        Self::new(
            T::lit(r.fx),
            T::lit(r.fy),
            T::lit(r.cx),
            T::lit(r.cy),
            r.width,
            r.height,
            Mat3(rot),
            Vec3::new(T::lit(m[0][3]), T::lit(m[1][3]), T::lit(m[2][3])),
        )
    }
}

/// On-disk camera description: intrinsics and a row-major 4×4
/// world-to-camera matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: [[f64; 4]; 4],
}

pub const CAMERA_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub v: u32,
    pub cameras: Vec<CameraRecord>,
}

pub fn cameras_to_json<T: Scalar>(cameras: &[Camera<T>]) -> String {
    let file = CameraFile {
        v: CAMERA_FILE_VERSION,
        cameras: cameras.iter().map(Camera::to_record).collect(),
    };
    serde_json::to_string_pretty(&file).expect("camera file serializes")
}

pub fn cameras_from_json<T: Scalar>(text: &str) -> Result<Vec<Camera<T>>> {
    let file: CameraFile = serde_json::from_str(text)?;
    if file.v != CAMERA_FILE_VERSION {
        return Err(Error::InvalidParameter(format!("unsupported camera file version {}", file.v)));
    }
    file.cameras.iter().map(Camera::from_record).collect()
}

pub fn save_cameras<T: Scalar>(cameras: &[Camera<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cameras_to_json(cameras)).map_err(|e| Error::io(path, e))
}

pub fn load_cameras<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Camera<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cameras_from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::parse(path, j.to_string()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(
            Vec3::new(3.0f64, 1.0, 2.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            64,
            48,
            1.0,
        )
        .unwrap();
        let p = cam.world_to_camera(Vec3::zero());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.center() - Vec3::new(3.0, 1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let r = Camera::new(0.0f64, 1.0, 0.0, 0.0, 4, 4, Mat3::identity(), Vec3::zero());
        assert!(r.is_err());
        let r = Camera::new(1.0f64, 1.0, 0.0, 0.0, 0, 4, Mat3::identity(), Vec3::zero());
        assert!(r.is_err());
        let r = Camera::new(1.0f64, 1.0, 0.0, 0.0, 4, 4, Mat3::diag(Vec3::new(1.0, 1.0, -1.0)), Vec3::zero());
        assert!(r.is_err());
    }

    #[test]
    fn json_roundtrip() {
        let cam = Camera::look_at(
            Vec3::new(0.0f64, -2.0, 1.0),
            Vec3::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            32,
            32,
            0.8,
        )
        .unwrap();
        let back: Vec<Camera<f64>> = cameras_from_json(&cameras_to_json(&[cam.clone()])).unwrap();
        assert_eq!(back[0], cam);
    }
}
