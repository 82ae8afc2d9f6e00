//! Deterministic Fibonacci-lattice quadrature on the hemisphere and sphere.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

/// One quadrature sample of incident light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentSample {
    pub direction: Vector3<f64>,
    /// Steradians.
    pub solid_angle: f64,
    pub radiance: [f64; 3],
}

fn golden_ratio() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

/// Lattice points on the `+z` hemisphere: `z_k = 1 - (k + 0.5) / count`,
/// `phi_k = 2 pi k (1 - 1 / golden)`.
pub fn hemisphere_lattice(count: usize) -> Vec<Vector3<f64>> {
    let step = 2.0 * PI * (1.0 - 1.0 / golden_ratio());
    (0..count)
        .map(|k| {
            let z = 1.0 - (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = step * k as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Lattice points covering the full sphere.
pub fn sphere_lattice(count: usize) -> Vec<Vector3<f64>> {
    let step = 2.0 * PI * (1.0 - 1.0 / golden_ratio());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = step * k as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Tangent frame `(t, b)` completing unit `n` to a right-handed basis,
/// branch-free apart from the sign of `n.z`.
#[inline]
pub fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let s = 1f64.copysign(n.z);
    let a = -1.0 / (s + n.z);
    let b = n.x * n.y * a;
    (
        Vector3::new(1.0 + s * n.x * n.x * a, s * b, -s * n.x),
        Vector3::new(b, s + n.y * n.y * a, -n.y),
    )
}

/// Jacobians `dt/dn` and `db/dn` of [`orthonormal_basis`].
pub fn orthonormal_basis_jacobians(n: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let s = 1f64.copysign(n.z);
    let a = -1.0 / (s + n.z);
    let da = 1.0 / ((s + n.z) * (s + n.z));
    let (x, y) = (n.x, n.y);
    let db = Vector3::new(y * a, x * a, x * y * da);
    let jt = Matrix3::new(
        2.0 * s * x * a, 0.0, s * x * x * da,
        s * db.x, s * db.y, s * db.z,
        -s, 0.0, 0.0,
    );
    let jb = Matrix3::new(
        db.x, db.y, db.z,
        0.0, 2.0 * y * a, y * y * da,
        0.0, -1.0, 0.0,
    );
    (jt, jb)
}

/// Rotates a local lattice point into the frame of `n`.
#[inline]
pub fn to_world(local: &Vector3<f64>, n: &Vector3<f64>, t: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    t * local.x + b * local.y + n * local.z
}

/// `count` Fibonacci directions on the hemisphere about unit `n`, each
/// carrying solid angle `2 pi / count`.
pub fn fibonacci_hemisphere(n: &Vector3<f64>, count: usize) -> Vec<IncidentSample> {
    let (t, b) = orthonormal_basis(n);
    let solid_angle = 2.0 * PI / count as f64;
    hemisphere_lattice(count)
        .iter()
        .map(|l| IncidentSample {
            direction: to_world(l, n, &t, &b),
            solid_angle,
            radiance: [0.0; 3],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn single_sample_sits_near_pole() {
        let n = Vector3::new(0.0, 0.6, 0.8);
        let s = fibonacci_hemisphere(&n, 1);
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s[0].solid_angle, 2.0 * PI);
        assert_relative_eq!(s[0].direction.dot(&n), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn samples_cover_hemisphere_with_full_solid_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for count in [1, 2, 7, 24, 100, 384] {
            let n = random_unit(&mut rng);
            let s = fibonacci_hemisphere(&n, count);
            let total: f64 = s.iter().map(|x| x.solid_angle).sum();
            assert_relative_eq!(total, 2.0 * PI, epsilon = 1e-12);
            for x in &s {
                assert!(x.direction.dot(&n) >= 0.0);
                assert_relative_eq!(x.direction.norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cosine_integral_is_pi() {
        let n = Vector3::new(1.0, -2.0, 0.5).normalize();
        let s = fibonacci_hemisphere(&n, 1024);
        let integral: f64 = s.iter().map(|x| x.direction.dot(&n) * x.solid_angle).sum();
        assert!((integral - PI).abs() / PI < 5e-3);
    }

    #[test]
    fn basis_is_orthonormal_and_right_handed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = random_unit(&mut rng);
            let (t, b) = orthonormal_basis(&n);
            assert_relative_eq!(t.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(b.norm(), 1.0, epsilon = 1e-12);
            assert!(t.dot(&b).abs() < 1e-12 && t.dot(&n).abs() < 1e-12);
            assert_relative_eq!(t.cross(&b), n, epsilon = 1e-12);
        }
        let (t, b) = orthonormal_basis(&-Vector3::z());
        assert_relative_eq!(t.cross(&b), -Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn basis_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            if n.z.abs() < 0.05 {
                continue;
            }
            let (jt, jb) = orthonormal_basis_jacobians(&n);
            for axis in 0..3 {
                let mut np = n;
                let mut nm = n;
                np[axis] += h;
                nm[axis] -= h;
                let (tp, bp) = orthonormal_basis(&np);
                let (tm, bm) = orthonormal_basis(&nm);
                let dt = (tp - tm) / (2.0 * h);
                let db = (bp - bm) / (2.0 * h);
                assert_relative_eq!(jt.column(axis).into_owned(), dt, epsilon = 1e-6);
                assert_relative_eq!(jb.column(axis).into_owned(), db, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn sphere_lattice_is_balanced() {
        let pts = sphere_lattice(512);
        let mean: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / 512.0;
        assert!(mean.norm() < 1e-2);
    }
}
