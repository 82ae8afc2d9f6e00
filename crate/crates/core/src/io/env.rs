//! Latitude-longitude environment maps projected onto spherical harmonics.
//!
//! Column `i` of a `W x H` map covers azimuth `phi = 2 pi (i + 1/2) / W`,
//! row `j` polar angle `theta = pi (j + 1/2) / H` measured from `+z`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;

use super::image_io::{decode_fmap, decode_hdr};
use crate::error::{Error, Result};
use crate::render::FloatImage;
use crate::sh::{basis, coeff_count, ShBlock, MAX_SH_DEGREE};

/// Unit direction at the center of pixel `(i, j)`.
pub fn latlong_direction(i: u32, j: u32, width: u32, height: u32) -> Vector3<f64> {
    let phi = 2.0 * PI * (f64::from(i) + 0.5) / f64::from(width);
    let theta = PI * (f64::from(j) + 0.5) / f64::from(height);
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Riemann-sum SH projection with `sin(theta)` area weights.
pub fn project_env_image(img: &FloatImage, degree: u32) -> Result<ShBlock> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid(format!("SH degree {degree} is not supported")));
    }
    if img.channels != 3 || img.width == 0 || img.height == 0 {
        return Err(Error::invalid("environment map must be a non-empty RGB image"));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("environment map contains non-finite radiance"));
    }
    let n = coeff_count(degree);
    let mut block = ShBlock::zeros(degree, 3);
    let dtheta = PI / f64::from(img.height);
    let dphi = 2.0 * PI / f64::from(img.width);
    for j in 0..img.height {
        let theta = PI * (f64::from(j) + 0.5) / f64::from(img.height);
        let weight = theta.sin() * dtheta * dphi;
        for i in 0..img.width {
            let y = basis(degree, &latlong_direction(i, j, img.width, img.height));
            let px = img.pixel(i, j);
            for k in 0..n {
                for c in 0..3 {
                    block.coeffs[k * 3 + c] += px[c] * y[k] * weight;
                }
            }
        }
    }
    Ok(block)
}

/// Loads a Radiance `.hdr` or `.fmap` environment map and projects it.
pub fn load_env_map(path: impl AsRef<Path>, degree: u32) -> Result<ShBlock> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_env_map(&bytes, degree).map_err(|e| match e {
        Error::InvalidInput(m) => Error::load(path, m),
        other => Error::load(path, other.to_string()),
    })
}

/// Projects environment-map bytes, detecting the format from the content.
pub fn decode_env_map(bytes: &[u8], degree: u32) -> Result<ShBlock> {
    let img = if bytes.starts_with(b"FMAP") {
        decode_fmap(bytes)?
    } else if bytes.starts_with(b"#?") {
        decode_hdr(bytes)?
    } else {
        return Err(Error::parse(0, "not a Radiance HDR or FMAP environment map"));
    };
    project_env_image(&img, degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::evaluate_sh;

    fn map(w: u32, h: u32, f: impl Fn(&Vector3<f64>) -> [f64; 3]) -> FloatImage {
        let mut img = FloatImage::new(w, h, 3);
        for j in 0..h {
            for i in 0..w {
                img.pixel_mut(i, j).copy_from_slice(&f(&latlong_direction(i, j, w, h)));
            }
        }
        img
    }

    #[test]
    fn constant_map_projects_to_dc() {
        let block = project_env_image(&map(256, 128, |_| [0.7, 1.3, 2.0]), 3).unwrap();
        let dc = block.coeffs[0];
        for k in 1..16 {
            for c in 0..3 {
                assert!(block.get(k, c).abs() < 1e-3 * dc, "k={k}");
            }
        }
        let v = evaluate_sh(&block, &Vector3::new(0.3, -0.2, 0.9).normalize()).unwrap();
        for (got, want) in v.iter().zip([0.7, 1.3, 2.0]) {
            assert!((got - want).abs() < 1e-3 * want);
        }
    }

    #[test]
    fn single_basis_pattern_is_recovered() {
        // Y_1,0 is proportional to z.
        let block = project_env_image(&map(256, 128, |d| [d.z, d.z, d.z]), 3).unwrap();
        let expected = (4.0 * PI / 3.0f64).sqrt();
        for k in 0..16 {
            let want = if k == 2 { expected } else { 0.0 };
            assert!((block.get(k, 0) - want).abs() < 1e-2, "k={k}: {}", block.get(k, 0));
        }
    }

    #[test]
    fn projection_is_linear() {
        let f = |d: &Vector3<f64>| [1.0 + d.x, 0.5 + d.y * d.y, 2.0 - d.z];
        let a = project_env_image(&map(64, 32, f), 3).unwrap();
        let b = project_env_image(&map(64, 32, |d| f(d).map(|v| 2.0 * v)), 3).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_env_map(b"P6 not an env map", 3).is_err());
        assert!(project_env_image(&FloatImage::new(4, 2, 1), 3).is_err());
    }
}
