//! Pinhole camera: world-to-camera rigid transform plus intrinsics.
//!
//! Camera space looks down `+z` with `+y` pointing down the image. Pixel
//! `(px, py)` is sampled at its center `(px + 0.5, py + 0.5)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this camera-space depth are culled.
pub const Z_NEAR: f64 = 0.01;
/// Low-pass floor added to the diagonal of every projected covariance, in px^2.
pub const COVARIANCE_FLOOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// JSON form of a camera, as used by `cameras.json` and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    #[serde(default)]
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 4x4 world-to-camera matrix.
    pub world_to_camera: Vec<f64>,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let ortho = rotation.transpose() * rotation - Matrix3::identity();
        if ortho.abs().max() > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, centered principal point.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self::new(
            rotation,
            -(rotation * eye),
            (f, f, 0.5 * width as f64, 0.5 * height as f64),
            width,
            height,
        )
    }

    pub fn from_spec(spec: &CameraSpec) -> Result<Self> {
        if spec.world_to_camera.len() != 16 {
            return Err(Error::invalid(format!(
                "world_to_camera needs 16 values, got {}",
                spec.world_to_camera.len()
            )));
        }
        let m = &spec.world_to_camera;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(
            rotation,
            translation,
            (spec.fx, spec.fy, spec.cx, spec.cy),
            spec.width,
            spec.height,
        )
    }

    pub fn to_spec(&self, name: &str) -> CameraSpec {
        let r = &self.rotation;
        let t = &self.translation;
        CameraSpec {
            name: name.to_string(),
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            world_to_camera: vec![
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
                0.0, 0.0, 0.0, 1.0,
            ],
        }
    }

    /// World-space camera center.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Image-plane position of a camera-space point.
    pub fn project_camera_point(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }

    /// Jacobian of the perspective map at camera-space point `t`.
    pub fn projection_jacobian(&self, t: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / t.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * t.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * t.y * iz * iz,
        )
    }

    /// Applies the same rigid motion `x -> R x + t` to the world: the returned
    /// camera sees the moved world exactly as `self` saw the original.
    pub fn moved_with(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Camera {
        let new_rot = self.rotation * rotation.transpose();
        Camera {
            rotation: new_rot,
            translation: self.translation - new_rot * translation,
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// `J W Sigma W^T J^T` at world mean `mu`, without the low-pass floor.
/// `None` when the mean is behind the near plane.
pub fn project_covariance_2d_raw(cov: &Matrix3<f64>, camera: &Camera, mu: &Vector3<f64>) -> Option<Matrix2<f64>> {
    let t = camera.to_camera(mu);
    if t.z <= Z_NEAR {
        return None;
    }
    let jw = camera.projection_jacobian(&t) * camera.rotation;
    Some(jw * cov * jw.transpose())
}

/// Screen-space covariance with the `0.3 px^2` floor on the diagonal.
pub fn project_covariance_2d(cov: &Matrix3<f64>, camera: &Camera, mu: &Vector3<f64>) -> Option<Matrix2<f64>> {
    project_covariance_2d_raw(cov, camera, mu).map(|m| m + Matrix2::identity() * COVARIANCE_FLOOR)
}
