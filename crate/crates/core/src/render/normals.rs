use nalgebra::Vector3;

use super::FloatImage;
use crate::camera::Camera;

/// Pixels whose accumulated opacity is below this carry no depth normal.
pub const PSEUDO_NORMAL_MIN_OPACITY: f64 = 0.5;

/// Camera-space normals from a depth map: unprojected points are
/// differentiated with central differences (one-sided where a neighbor is
/// missing), crossed, normalized and oriented toward the camera. Pixels with
/// non-finite or non-positive depth, or without a neighbor along either
/// axis, get the zero vector.
pub fn pseudo_normal_from_depth(depth: &FloatImage, camera: &Camera) -> FloatImage {
    let (w, h) = (depth.width, depth.height);
    let mut out = FloatImage::new(w, h, 3);
    let valid = |x: i64, y: i64| -> Option<Vector3<f64>> {
        if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) {
            return None;
        }
        let d = depth.get(x as u32, y as u32, 0);
        if !(d.is_finite() && d > 0.0) {
            return None;
        }
        Some(Vector3::new(
            (x as f64 + 0.5 - camera.cx) / camera.fx * d,
            (y as f64 + 0.5 - camera.cy) / camera.fy * d,
            d,
        ))
    };
    let diff = |x: i64, y: i64, dx: i64, dy: i64, center: Vector3<f64>| -> Option<Vector3<f64>> {
        match (valid(x + dx, y + dy), valid(x - dx, y - dy)) {
            (Some(p), Some(m)) => Some((p - m) * 0.5),
            (Some(p), None) => Some(p - center),
            (None, Some(m)) => Some(center - m),
            (None, None) => None,
        }
    };
    for y in 0..i64::from(h) {
        for x in 0..i64::from(w) {
            let Some(center) = valid(x, y) else { continue };
            let (Some(du), Some(dv)) = (diff(x, y, 1, 0, center), diff(x, y, 0, 1, center)) else {
                continue;
            };
            let n = du.cross(&dv);
            let len = n.norm();
            if len == 0.0 || !len.is_finite() {
                continue;
            }
            let mut n = n / len;
            if n.z > 0.0 {
                n = -n;
            }
            out.pixel_mut(x as u32, y as u32).copy_from_slice(n.as_slice());
        }
    }
    out
}

/// [`pseudo_normal_from_depth`] rotated into world space.
pub fn world_normals_from_depth(depth: &FloatImage, camera: &Camera) -> FloatImage {
    let mut n = pseudo_normal_from_depth(depth, camera);
    let rt = camera.rotation.transpose();
    for px in n.data.chunks_mut(3) {
        let v = rt * Vector3::new(px[0], px[1], px[2]);
        px.copy_from_slice(v.as_slice());
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn camera() -> Camera {
        Camera::new(Matrix3::identity(), Vector3::zeros(), (40.0, 40.0, 16.0, 16.0), 32, 32).unwrap()
    }

    #[test]
    fn flat_plane_faces_camera() {
        let depth = FloatImage::filled(32, 32, 1, 3.0);
        let n = pseudo_normal_from_depth(&depth, &camera());
        for p in n.data.chunks(3) {
            assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
            assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
            assert_relative_eq!(p[2], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tilted_plane_matches_analytic_normal() {
        // Plane through (0,0,4) with normal (0, s, -s), s = sqrt(1/2): y - z = -4.
        let cam = camera();
        let mut depth = FloatImage::new(32, 32, 1);
        for y in 0..32 {
            for x in 0..32 {
                let ry = (y as f64 + 0.5 - cam.cy) / cam.fy;
                // y = ry z, so ry z - z = -4.
                depth.pixel_mut(x, y)[0] = -4.0 / (ry - 1.0);
            }
        }
        let n = pseudo_normal_from_depth(&depth, &cam);
        let s = 0.5f64.sqrt();
        let expected = Vector3::new(0.0, s, -s);
        for y in 1..31 {
            for x in 1..31 {
                let p = n.pixel(x, y);
                let got = Vector3::new(p[0], p[1], p[2]);
                assert!((got - expected).norm() < 1e-3, "{got:?}");
            }
        }
    }

    #[test]
    fn isolated_pixel_has_zero_normal() {
        let mut depth = FloatImage::filled(5, 5, 1, f64::NAN);
        depth.pixel_mut(2, 2)[0] = 1.0;
        let n = pseudo_normal_from_depth(&depth, &camera());
        assert!(n.data.iter().all(|v| *v == 0.0));
    }
}
