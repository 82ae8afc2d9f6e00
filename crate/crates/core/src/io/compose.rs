//! Rigid placement of several scenes into one, with re-baked visibility.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::bvh::{bake_visibility_into, build_lbvh, BakeResult, BAKE_K_OFFSET};
use crate::error::{Error, Result};
use crate::gaussian::quat_mul;
use crate::scene::Scene;
use crate::sh::{band_rotations, rotate_coeffs, ShBlock};

/// Relative tolerance on the uniformity and orthogonality of a transform.
const SIMILARITY_TOLERANCE: f64 = 1e-6;

/// Rotation, uniform scale and translation: `x -> scale * R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Decomposes a row-major 4x4 affine matrix; shear, reflection and
    /// non-uniform scale are rejected.
    pub fn from_matrix(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::invalid(format!("transform needs 16 values, got {}", m.len())));
        }
        let m4 = Matrix4::from_row_slice(m);
        if m4.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > SIMILARITY_TOLERANCE) {
            return Err(Error::invalid("transform is not affine"));
        }
        let a: Matrix3<f64> = m4.fixed_view::<3, 3>(0, 0).into();
        let norms: Vec<f64> = (0..3).map(|c| a.column(c).norm()).collect();
        let scale = norms.iter().sum::<f64>() / 3.0;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("transform has zero scale"));
        }
        if norms.iter().any(|n| (n - scale).abs() > SIMILARITY_TOLERANCE * scale) {
            return Err(Error::invalid(format!(
                "non-uniform scale ({:.6}, {:.6}, {:.6}) is not supported",
                norms[0], norms[1], norms[2]
            )));
        }
        let rotation = a / scale;
        if (rotation.transpose() * rotation - Matrix3::identity()).norm() > 1e-6 {
            return Err(Error::invalid("transform contains shear"));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::invalid("transform contains a reflection"));
        }
        Ok(Self {
            rotation,
            translation: Vector3::new(m[3], m[7], m[11]),
            scale,
        })
    }

    pub fn to_matrix(&self) -> [f64; 16] {
        let a = self.rotation * self.scale;
        let t = self.translation;
        [
            a[(0, 0)], a[(0, 1)], a[(0, 2)], t.x,
            a[(1, 0)], a[(1, 1)], a[(1, 2)], t.y,
            a[(2, 0)], a[(2, 1)], a[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// JSON form of a placement: either `{"matrix": [16 row-major]}` or any of
/// `{"rotation": [w, x, y, z], "translation": [x, y, z], "scale": s}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl TransformSpec {
    pub fn to_similarity(&self) -> Result<Similarity> {
        if let Some(m) = &self.matrix {
            if self.rotation.is_some() || self.translation.is_some() || self.scale.is_some() {
                return Err(Error::invalid("give either a matrix or rotation/translation/scale"));
            }
            return Similarity::from_matrix(m);
        }
        let rotation = match self.rotation {
            Some([w, x, y, z]) => {
                let n = (w * w + x * x + y * y + z * z).sqrt();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::invalid("rotation quaternion has zero length"));
                }
                let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
                Rotation3::from(q).into_inner()
            }
            None => Matrix3::identity(),
        };
        let scale = self.scale.unwrap_or(1.0);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        Ok(Similarity {
            rotation,
            translation: self.translation.map_or(Vector3::zeros(), Vector3::from),
            scale,
        })
    }
}

/// Places `part` by `t`: positions, orientations, scales and normals move
/// with it, and every per-point SH expansion is rotated.
pub fn transform_scene(part: &Scene, t: &Similarity) -> Result<Scene> {
    let q_r = UnitQuaternion::from_matrix(&t.rotation);
    let q_r = [q_r.w, q_r.i, q_r.j, q_r.k];
    let deg = part.sh_degrees;
    let color_bands = band_rotations(&t.rotation, deg.color);
    let vis_bands = band_rotations(&t.rotation, deg.visibility);
    let local_bands = band_rotations(&t.rotation, deg.local_light);
    let mut out = part.clone();
    if t.rotation == Matrix3::identity() && t.scale == 1.0 {
        for p in &mut out.points {
            p.mean += t.translation;
        }
        return Ok(out);
    }
    for p in &mut out.points {
        p.mean = t.apply(&p.mean);
        let q = quat_mul(&q_r, &p.rotation);
        let n = crate::gaussian::quat_norm(&q);
        p.rotation = q.map(|c| c / n);
        p.scale *= t.scale;
        p.normal = (t.rotation * p.normal).normalize();
        let mut flat: Vec<f64> = p.color_sh.iter().flatten().copied().collect();
        rotate_coeffs(&mut flat, 3, deg.color, &color_bands);
        for (k, row) in p.color_sh.iter_mut().enumerate() {
            row.copy_from_slice(&flat[3 * k..3 * k + 3]);
        }
        rotate_coeffs(&mut p.visibility_sh, 1, deg.visibility, &vis_bands);
        let mut flat: Vec<f64> = p.local_light_sh.iter().flatten().copied().collect();
        rotate_coeffs(&mut flat, 3, deg.local_light, &local_bands);
        for (k, row) in p.local_light_sh.iter_mut().enumerate() {
            row.copy_from_slice(&flat[3 * k..3 * k + 3]);
        }
    }
    Ok(out)
}

/// Places every part, concatenates them under `env` and re-bakes visibility
/// with `rays` directions per point.
pub fn compose_scenes(parts: &[(Scene, Similarity)], env: &ShBlock, rays: usize) -> Result<(Scene, BakeResult)> {
    let first = parts.first().ok_or_else(|| Error::invalid("compose needs at least one part"))?;
    let degrees = first.0.sh_degrees;
    if parts.iter().any(|(s, _)| s.sh_degrees.color != degrees.color || s.sh_degrees.visibility != degrees.visibility || s.sh_degrees.local_light != degrees.local_light) {
        return Err(Error::invalid("parts disagree on per-point SH degrees"));
    }
    env.validate()?;
    if env.channels != 3 {
        return Err(Error::invalid("environment light needs three channels"));
    }
    let mut points = Vec::new();
    for (scene, t) in parts {
        points.extend(transform_scene(scene, t)?.points);
    }
    let mut scene = Scene::new(points);
    scene.sh_degrees = degrees;
    scene.sh_degrees.env = env.degree;
    scene.env_light = env.clone();
    if scene.is_empty() {
        return Ok((scene, BakeResult::default()));
    }
    let bvh = build_lbvh(&scene)?;
    let bake = bake_visibility_into(&mut scene, &bvh, rays, BAKE_K_OFFSET)?;
    Ok((scene, bake))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn matrix_round_trip_and_rejections() {
        let mut r = fixtures::rng(1);
        let s = Similarity {
            rotation: fixtures::random_rotation(&mut r),
            translation: Vector3::new(1.0, -2.0, 0.5),
            scale: 1.7,
        };
        let back = Similarity::from_matrix(&s.to_matrix()).unwrap();
        assert!((back.rotation - s.rotation).norm() < 1e-12);
        assert!((back.scale - 1.7).abs() < 1e-12);
        let mut m = Similarity::identity().to_matrix();
        m[0] = 2.0;
        assert!(Similarity::from_matrix(&m).unwrap_err().to_string().contains("non-uniform"));
        let mut m = Similarity::identity().to_matrix();
        m[0] = -1.0;
        assert!(Similarity::from_matrix(&m).is_err());
    }

    #[test]
    fn spec_forms() {
        let spec: TransformSpec = serde_json::from_str(r#"{"translation": [1, 2, 3], "scale": 2}"#).unwrap();
        let s = spec.to_similarity().unwrap();
        assert_eq!(s.apply(&Vector3::new(1.0, 0.0, 0.0)), Vector3::new(3.0, 2.0, 3.0));
        let spec: TransformSpec = serde_json::from_str(r#"{"matrix": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#).unwrap();
        assert_eq!(spec.to_similarity().unwrap(), Similarity::identity());
        let spec: TransformSpec = serde_json::from_str(r#"{"scale": -1}"#).unwrap();
        assert!(spec.to_similarity().is_err());
    }

    #[test]
    fn transformed_point_matches_moved_covariance() {
        let mut r = fixtures::rng(2);
        let p = fixtures::random_point(&mut r, Vector3::zeros(), 1.0, (0.1, 0.4));
        let scene = Scene::new(vec![p.clone()]);
        let t = Similarity {
            rotation: fixtures::random_rotation(&mut r),
            translation: Vector3::new(0.3, 0.1, -0.2),
            scale: 1.3,
        };
        let q = &transform_scene(&scene, &t).unwrap().points[0];
        let a = t.rotation * t.scale;
        let expected = a * p.covariance() * a.transpose();
        assert!((q.covariance() - expected).norm() < 1e-12);
        assert!((q.normal - t.rotation * p.normal).norm() < 1e-12);
        assert_eq!(q.base_color, p.base_color);
    }
}
