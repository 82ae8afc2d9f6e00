//! Simplified Disney BRDF: Lambertian diffuse plus a microfacet specular lobe
//! with a spherical-Gaussian NDF, Schlick Fresnel and Smith-GGX geometry.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::ROUGHNESS_FLOOR;
use crate::error::{Error, Result};

/// `(1 - m) / pi * b`.
pub fn diffuse_brdf(base_color: [f64; 3], metallic: f64) -> [f64; 3] {
    let k = (1.0 - metallic) / PI;
    base_color.map(|b| k * b)
}

/// `1 / (pi r^2) * exp(2 / r^2 * (h.n - 1))`.
pub fn ndf_sg(h_dot_n: f64, roughness: f64) -> Result<f64> {
    if !(roughness > 0.0) {
        return Err(Error::invalid("spherical-Gaussian NDF is singular at zero roughness"));
    }
    Ok(ndf_sg_unchecked(h_dot_n, roughness))
}

#[inline]
pub(crate) fn ndf_sg_unchecked(h_dot_n: f64, r: f64) -> f64 {
    let r2 = r * r;
    (2.0 / r2 * (h_dot_n - 1.0)).exp() / (PI * r2)
}

#[inline]
pub fn f0(base_color: [f64; 3], metallic: f64) -> [f64; 3] {
    base_color.map(|b| 0.04 * (1.0 - metallic) + metallic * b)
}

/// Schlick: `F0 + (1 - F0)(1 - o.h)^5`.
pub fn fresnel_schlick(o_dot_h: f64, base_color: [f64; 3], metallic: f64) -> [f64; 3] {
    let w = (1.0 - o_dot_h).powi(5);
    f0(base_color, metallic).map(|f| f + (1.0 - f) * w)
}

/// One Smith-GGX factor `2z / (z + sqrt(r^2 + (1 - r^2) z^2))`.
#[inline]
pub fn g1_ggx(z: f64, r: f64) -> f64 {
    let r2 = r * r;
    2.0 * z / (z + (r2 + (1.0 - r2) * z * z).sqrt())
}

/// `G1(i.n) * G1(o.n)`.
pub fn geometry_ggx(i_dot_n: f64, o_dot_n: f64, roughness: f64) -> f64 {
    if i_dot_n <= 0.0 || o_dot_n <= 0.0 {
        return 0.0;
    }
    g1_ggx(i_dot_n, roughness) * g1_ggx(o_dot_n, roughness)
}

/// `D F G / (4 (n.i)(n.o))`, zero for back-facing or degenerate configurations.
/// Roughness is floored at [`ROUGHNESS_FLOOR`].
pub fn specular_brdf(
    omega_o: &Vector3<f64>,
    omega_i: &Vector3<f64>,
    normal: &Vector3<f64>,
    base_color: [f64; 3],
    roughness: f64,
    metallic: f64,
) -> [f64; 3] {
    let ci = omega_i.dot(normal);
    let co = omega_o.dot(normal);
    if ci <= 0.0 || co <= 0.0 {
        return [0.0; 3];
    }
    let hv = omega_i + omega_o;
    let hn = hv.norm();
    if hn < 1e-12 {
        return [0.0; 3];
    }
    let h = hv / hn;
    let r = roughness.max(ROUGHNESS_FLOOR);
    let d = ndf_sg_unchecked(h.dot(normal), r);
    let g = geometry_ggx(ci, co, r);
    let f = fresnel_schlick(omega_o.dot(&h).clamp(0.0, 1.0), base_color, metallic);
    let k = d * g / (4.0 * ci * co);
    f.map(|fc| fc * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hemisphere(rng: &mut ChaCha8Rng, n: &Vector3<f64>) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 && v.dot(n) > 0.05 * v.norm() {
                return v.normalize();
            }
        }
    }

    #[test]
    fn diffuse_formula() {
        let d = diffuse_brdf([0.6; 3], 0.0);
        assert_relative_eq!(d[0], 0.6 / PI, epsilon = 1e-15);
        assert_relative_eq!(d[0], 0.1910, epsilon = 1e-4);
        assert_eq!(diffuse_brdf([0.3, 0.9, 1.0], 1.0), [0.0; 3]);
        assert_relative_eq!(diffuse_brdf([1.0, 0.0, 0.0], 0.5)[0], 0.5 / PI, epsilon = 1e-15);
    }

    #[test]
    fn ndf_values() {
        assert_relative_eq!(ndf_sg(1.0, 0.5).unwrap(), 4.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(ndf_sg(1.0, 0.5).unwrap(), 1.2732, epsilon = 1e-4);
        assert_relative_eq!(ndf_sg(1.0, 1.0).unwrap(), 1.0 / PI, epsilon = 1e-15);
        let expect = 1.0 / (PI * 0.09) * (2.0 / 0.09 * (0.9 - 1.0f64)).exp();
        assert_relative_eq!(ndf_sg(0.9, 0.3).unwrap(), expect, max_relative = 1e-12);
        assert!(ndf_sg(0.5, 0.0).is_err());
        assert!(ndf_sg(1.0, 0.3).unwrap() > ndf_sg(0.99, 0.3).unwrap());
    }

    #[test]
    fn fresnel_endpoints() {
        assert_eq!(fresnel_schlick(1.0, [0.2, 0.5, 0.9], 0.0), [0.04; 3]);
        for fc in fresnel_schlick(0.0, [0.2, 0.5, 0.9], 0.3) {
            assert_relative_eq!(fc, 1.0, epsilon = 1e-15);
        }
        for c in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(fresnel_schlick(c, [1.0; 3], 1.0), [1.0; 3]);
        }
    }

    #[test]
    fn geometry_values() {
        assert_relative_eq!(geometry_ggx(1.0, 1.0, 1.0), 1.0, epsilon = 1e-15);
        for z in [0.1, 0.4, 0.9] {
            assert_relative_eq!(geometry_ggx(z, z, 0.0), 1.0, epsilon = 1e-15);
        }
        let g1 = 1.0 / (0.5 + (0.25f64 + 0.75 * 0.25).sqrt());
        assert_relative_eq!(geometry_ggx(0.5, 0.5, 0.5), g1 * g1, epsilon = 1e-15);
        assert_eq!(geometry_ggx(0.0, 0.5, 0.5), 0.0);
    }

    #[test]
    fn specular_backfacing_is_zero() {
        let n = Vector3::z();
        let o = Vector3::new(0.0, 0.6, 0.8);
        let i = Vector3::new(0.0, 0.6, -0.8);
        assert_eq!(specular_brdf(&o, &i, &n, [1.0; 3], 0.5, 0.5), [0.0; 3]);
        assert_eq!(specular_brdf(&o, &-o, &n, [1.0; 3], 0.5, 0.5), [0.0; 3]);
    }

    #[test]
    fn specular_is_composition_of_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = random_hemisphere(&mut rng, &Vector3::z());
            let o = random_hemisphere(&mut rng, &n);
            let i = random_hemisphere(&mut rng, &n);
            let b = [rng.gen(), rng.gen(), rng.gen()];
            let (r, m) = (rng.gen_range(0.05..1.0), rng.gen());
            let h = (o + i).normalize();
            let d = ndf_sg(h.dot(&n), r).unwrap();
            let f = fresnel_schlick(o.dot(&h), b, m);
            let g = geometry_ggx(i.dot(&n), o.dot(&n), r);
            let got = specular_brdf(&o, &i, &n, b, r, m);
            for c in 0..3 {
                let want = d * f[c] * g / (4.0 * i.dot(&n) * o.dot(&n));
                assert!((got[c] - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mirror_configuration_peaks() {
        let n = Vector3::z();
        let o = Vector3::new(0.3, 0.0, 0.9539392014169456);
        let mirror = Vector3::new(-o.x, -o.y, o.z);
        let got = specular_brdf(&o, &mirror, &n, [1.0; 3], 0.0, 1.0);
        let r = ROUGHNESS_FLOOR;
        let want = ndf_sg(1.0, r).unwrap() * geometry_ggx(o.z, o.z, r) / (4.0 * o.z * o.z);
        assert_relative_eq!(got[0], want, max_relative = 1e-12);
        let off = Vector3::new(-0.35, 0.0, (1.0f64 - 0.35 * 0.35).sqrt());
        assert!(specular_brdf(&o, &off, &n, [1.0; 3], 0.0, 1.0)[0] < got[0]);
    }

    proptest::proptest! {
        #[test]
        fn specular_is_reciprocal(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = random_hemisphere(&mut rng, &Vector3::new(0.2, -0.1, 1.0).normalize());
            let o = random_hemisphere(&mut rng, &n);
            let i = random_hemisphere(&mut rng, &n);
            let b = [rng.gen(), rng.gen(), rng.gen()];
            let (r, m) = (rng.gen_range(0.0..1.0), rng.gen());
            let ab = specular_brdf(&o, &i, &n, b, r, m);
            let ba = specular_brdf(&i, &o, &n, b, r, m);
            for c in 0..3 {
                proptest::prop_assert!((ab[c] - ba[c]).abs() < 1e-10 * ab[c].abs().max(1.0));
                proptest::prop_assert!(ab[c].is_finite() && ab[c] >= 0.0);
            }
        }
    }
}
