//! The relightable Gaussian primitive and its closed-form geometry.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::MAX_SH_COEFFS;

/// Tolerance on the norm of quaternions and normals.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_center_half_extent(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Slab test of the segment `origin + t * inv_dir^-1` for `t` in `[t_min, t_max]`.
    #[inline]
    pub fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_min: f64, t_max: f64) -> bool {
        let mut lo = t_min;
        let mut hi = t_max;
        for a in 0..3 {
            let t0 = (self.min[a] - origin[a]) * inv_dir[a];
            let t1 = (self.max[a] - origin[a]) * inv_dir[a];
            let (near, far) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            // NaN from 0 * inf (origin on a slab plane) must not reject the box.
            if near > lo {
                lo = near;
            }
            if far < hi {
                hi = far;
            }
            if lo > hi {
                return false;
            }
        }
        true
    }
}

/// Rotation matrix of a quaternion `[w, x, y, z]`, normalizing first.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b` of `[w, x, y, z]` quaternions.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `Sigma = R diag(s)^2 R^T` for a unit quaternion and positive scales.
pub fn covariance_from_rotation_scale(rotation: &[f64; 4], scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if (quat_norm(rotation) - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!(
            "rotation quaternion has norm {}, expected 1",
            quat_norm(rotation)
        )));
    }
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("scale components must be strictly positive"));
    }
    Ok(covariance_unchecked(rotation, scale))
}

pub(crate) fn covariance_unchecked(rotation: &[f64; 4], scale: &Vector3<f64>) -> Matrix3<f64> {
    let m = quat_to_matrix(rotation) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One relightable Gaussian.
///
/// Opacity is held as its pre-activation logit; [`GaussianPoint::opacity`]
/// applies the sigmoid. SH arrays are sized for the maximum supported degree
/// and coefficients above the scene's declared degree stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPoint {
    pub mean: Vector3<f64>,
    /// `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// View-dependent color, `color_sh[k][channel]`.
    pub color_sh: [[f64; 3]; MAX_SH_COEFFS],
    pub normal: Vector3<f64>,
    pub base_color: [f64; 3],
    pub roughness: f64,
    pub metallic: f64,
    pub visibility_sh: [f64; MAX_SH_COEFFS],
    /// Local incident light, degree <= 1, `local_light_sh[k][channel]`.
    pub local_light_sh: [[f64; 3]; 4],
}

impl Default for GaussianPoint {
    fn default() -> Self {
        let mut visibility_sh = [0.0; MAX_SH_COEFFS];
        visibility_sh[0] = 1.0 / crate::sh::C0;
        Self {
            mean: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: Vector3::repeat(1.0),
            opacity_logit: 0.0,
            color_sh: [[0.0; 3]; MAX_SH_COEFFS],
            normal: Vector3::z(),
            base_color: [0.5; 3],
            roughness: 0.5,
            metallic: 0.0,
            visibility_sh,
            local_light_sh: [[0.0; 3]; 4],
        }
    }
}

/// Number of scalar parameters of one point in [`GaussianPoint::write_params`] order.
pub const PARAM_COUNT: usize = 95;

/// Offsets of each attribute group in the flat parameter layout.
pub mod param {
    use std::ops::Range;
    pub const MEAN: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const SCALE: Range<usize> = 7..10;
    pub const OPACITY: Range<usize> = 10..11;
    pub const COLOR_SH: Range<usize> = 11..59;
    pub const NORMAL: Range<usize> = 59..62;
    pub const BASE_COLOR: Range<usize> = 62..65;
    pub const ROUGHNESS: Range<usize> = 65..66;
    pub const METALLIC: Range<usize> = 66..67;
    pub const VISIBILITY_SH: Range<usize> = 67..83;
    pub const LOCAL_LIGHT_SH: Range<usize> = 83..95;

    /// All groups with their display names.
    pub const GROUPS: [(&str, Range<usize>); 11] = [
        ("mean", MEAN),
        ("rotation", ROTATION),
        ("scale", SCALE),
        ("opacity", OPACITY),
        ("color_sh", COLOR_SH),
        ("normal", NORMAL),
        ("base_color", BASE_COLOR),
        ("roughness", ROUGHNESS),
        ("metallic", METALLIC),
        ("visibility_sh", VISIBILITY_SH),
        ("local_light_sh", LOCAL_LIGHT_SH),
    ];
}

impl GaussianPoint {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, opacity: f64) {
        self.opacity_logit = logit(opacity.clamp(0.0, 1.0));
    }

    pub fn with_opacity(mut self, opacity: f64) -> Self {
        self.set_opacity(opacity);
        self
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_unchecked(&self.rotation, &self.scale)
    }

    pub fn unit_normal(&self) -> Vector3<f64> {
        let n = self.normal.norm();
        if n > 0.0 {
            self.normal / n
        } else {
            Vector3::z()
        }
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }

    /// Sets the DC color so the view-independent color equals `rgb`.
    pub fn set_color(&mut self, rgb: [f64; 3]) {
        self.color_sh = [[0.0; 3]; MAX_SH_COEFFS];
        for c in 0..3 {
            self.color_sh[0][c] = rgb[c] / crate::sh::C0;
        }
    }

    /// Sets the visibility expansion to the constant `v`.
    pub fn set_constant_visibility(&mut self, v: f64) {
        self.visibility_sh = [0.0; MAX_SH_COEFFS];
        self.visibility_sh[0] = v / crate::sh::C0;
    }

    /// Restores the invariants after an unconstrained update.
    pub fn project_valid(&mut self) {
        let qn = quat_norm(&self.rotation);
        if qn > 0.0 && qn.is_finite() {
            self.rotation.iter_mut().for_each(|c| *c /= qn);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
        let nn = self.normal.norm();
        if nn > 0.0 && nn.is_finite() {
            self.normal /= nn;
        } else {
            self.normal = Vector3::z();
        }
        for s in self.scale.iter_mut() {
            *s = s.max(1e-7);
        }
        for b in self.base_color.iter_mut() {
            *b = b.clamp(0.0, 1.0);
        }
        self.roughness = self.roughness.clamp(crate::shading::ROUGHNESS_FLOOR, 1.0);
        self.metallic = self.metallic.clamp(0.0, 1.0);
    }

    pub fn write_params(&self, out: &mut [f64]) {
        assert_eq!(out.len(), PARAM_COUNT);
        out[param::MEAN].copy_from_slice(self.mean.as_slice());
        out[param::ROTATION].copy_from_slice(&self.rotation);
        out[param::SCALE].copy_from_slice(self.scale.as_slice());
        out[param::OPACITY.start] = self.opacity_logit;
        for k in 0..MAX_SH_COEFFS {
            out[param::COLOR_SH.start + 3 * k..param::COLOR_SH.start + 3 * k + 3]
                .copy_from_slice(&self.color_sh[k]);
        }
        out[param::NORMAL].copy_from_slice(self.normal.as_slice());
        out[param::BASE_COLOR].copy_from_slice(&self.base_color);
        out[param::ROUGHNESS.start] = self.roughness;
        out[param::METALLIC.start] = self.metallic;
        out[param::VISIBILITY_SH].copy_from_slice(&self.visibility_sh);
        for k in 0..4 {
            out[param::LOCAL_LIGHT_SH.start + 3 * k..param::LOCAL_LIGHT_SH.start + 3 * k + 3]
                .copy_from_slice(&self.local_light_sh[k]);
        }
    }

    pub fn read_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), PARAM_COUNT);
        self.mean = Vector3::from_column_slice(&p[param::MEAN]);
        self.rotation.copy_from_slice(&p[param::ROTATION]);
        self.scale = Vector3::from_column_slice(&p[param::SCALE]);
        self.opacity_logit = p[param::OPACITY.start];
        for k in 0..MAX_SH_COEFFS {
            self.color_sh[k]
                .copy_from_slice(&p[param::COLOR_SH.start + 3 * k..param::COLOR_SH.start + 3 * k + 3]);
        }
        self.normal = Vector3::from_column_slice(&p[param::NORMAL]);
        self.base_color.copy_from_slice(&p[param::BASE_COLOR]);
        self.roughness = p[param::ROUGHNESS.start];
        self.metallic = p[param::METALLIC.start];
        self.visibility_sh.copy_from_slice(&p[param::VISIBILITY_SH]);
        for k in 0..4 {
            self.local_light_sh[k].copy_from_slice(
                &p[param::LOCAL_LIGHT_SH.start + 3 * k..param::LOCAL_LIGHT_SH.start + 3 * k + 3],
            );
        }
    }

    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut out = [0.0; PARAM_COUNT];
        self.write_params(&mut out);
        out
    }
}

/// `exp(-1/2 (x - mu)^T Sigma^-1 (x - mu))`.
pub fn evaluate_gaussian(point: &GaussianPoint, x: &Vector3<f64>) -> f64 {
    let inv = point
        .covariance()
        .try_inverse()
        .expect("positive scales give an invertible covariance");
    let d = x - point.mean;
    (-0.5 * d.dot(&(inv * d))).exp()
}

/// World box centered at the mean with half-extent `k * sqrt(Sigma_aa)` per axis.
pub fn aabb_of_gaussian(point: &GaussianPoint, k_sigma: f64) -> Aabb {
    let cov = point.covariance();
    let half = Vector3::new(
        cov[(0, 0)].max(0.0).sqrt(),
        cov[(1, 1)].max(0.0).sqrt(),
        cov[(2, 2)].max(0.0).sqrt(),
    ) * k_sigma;
    Aabb::from_center_half_extent(point.mean, half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = quat_norm(&q);
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }

    #[test]
    fn identity_rotation_gives_squared_scales() {
        let cov = covariance_from_rotation_scale(&[1.0, 0.0, 0.0, 0.0], &Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_relative_eq!(cov, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let h = std::f64::consts::FRAC_PI_4;
        let q = [h.cos(), 0.0, 0.0, h.sin()];
        let cov = covariance_from_rotation_scale(&q, &Vector3::new(1.0, 2.0, 1.0)).unwrap();
        assert_relative_eq!(cov, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let s = Vector3::new(rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
            let cov = covariance_from_rotation_scale(&q, &s).unwrap();
            assert_relative_eq!(cov, cov.transpose(), epsilon = 1e-9);
            let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
            assert!(cov.cholesky().is_some());
        }
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let err = covariance_from_rotation_scale(&[2.0, 0.0, 0.0, 0.0], &Vector3::repeat(1.0));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        let err = covariance_from_rotation_scale(&[1.0, 0.0, 0.0, 0.0], &Vector3::new(1.0, 0.0, 1.0));
        assert!(err.is_err());
    }

    #[test]
    fn gaussian_peak_and_unit_distance() {
        let p = GaussianPoint {
            mean: Vector3::new(1.0, 2.0, 3.0),
            ..Default::default()
        };
        assert_eq!(evaluate_gaussian(&p, &p.mean), 1.0);
        let x = p.mean + Vector3::new(0.6, 0.0, 0.8);
        assert_relative_eq!(evaluate_gaussian(&p, &x), (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(evaluate_gaussian(&p, &x), 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn anisotropic_gaussian_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = GaussianPoint {
                mean: Vector3::new(rng.gen_range(-1.0..1.0), 0.0, 0.5),
                rotation: random_quat(&mut rng),
                scale: Vector3::new(rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)),
                ..Default::default()
            };
            let x = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = x - p.mean;
            let solved = p.covariance().lu().solve(&d).unwrap();
            assert_relative_eq!(evaluate_gaussian(&p, &x), (-0.5 * d.dot(&solved)).exp(), max_relative = 1e-10);
            // Monotone along the ray from the mean.
            let a = evaluate_gaussian(&p, &(p.mean + d * 0.5));
            let b = evaluate_gaussian(&p, &x);
            assert!(a >= b);
        }
    }

    #[test]
    fn aabb_half_extents() {
        let p = GaussianPoint::default();
        let b = aabb_of_gaussian(&p, 3.0);
        assert_relative_eq!(b.max - p.mean, Vector3::repeat(3.0), epsilon = 1e-12);
        let p = GaussianPoint {
            scale: Vector3::new(1.0, 2.0, 3.0),
            ..Default::default()
        };
        let b = aabb_of_gaussian(&p, 1.0);
        assert_relative_eq!(b.max, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        assert_relative_eq!(b.min, -Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn aabb_contains_sampled_ellipsoid_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GaussianPoint {
            mean: Vector3::new(0.3, -0.2, 1.0),
            rotation: random_quat(&mut rng),
            scale: Vector3::new(0.2, 1.5, 0.7),
            ..Default::default()
        };
        let k = 2.5;
        let b = aabb_of_gaussian(&p, k);
        let m = p.rotation_matrix() * Matrix3::from_diagonal(&p.scale);
        for _ in 0..10_000 {
            let u = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if u.norm() < 1e-3 {
                continue;
            }
            let x = p.mean + m * u.normalize() * k;
            let grown = Aabb::from_center_half_extent(b.center(), b.extent() * 0.5 + Vector3::repeat(1e-9));
            assert!(grown.contains(&x));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = GaussianPoint::default();
        let values: Vec<f64> = (0..PARAM_COUNT).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.read_params(&values);
        assert_eq!(p.params().to_vec(), values);
    }

    proptest::proptest! {
        #[test]
        fn aabb_is_monotone_in_k(k in 0.1f64..5.0, dk in 0.0f64..3.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = GaussianPoint {
                rotation: random_quat(&mut rng),
                scale: Vector3::new(rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)),
                ..Default::default()
            };
            proptest::prop_assert!(aabb_of_gaussian(&p, k + dk).contains_box(&aabb_of_gaussian(&p, k)));
        }
    }
}
