//! Least-squares fit of traced transmittance into per-point visibility SH.

use nalgebra::{DMatrix, DVector};

use super::lbvh::Bvh;
use super::trace::traced_visibility;
use super::DEFAULT_T_STOP;
use crate::error::{Error, Result};
use crate::par;
use crate::scene::Scene;
use crate::sh::{basis, coeff_count, MAX_SH_COEFFS};
use crate::shading::sampling::sphere_lattice;

/// Default number of sphere directions traced per point.
pub const DEFAULT_BAKE_RAYS: usize = 256;

/// Fitted visibility and the per-point RMS of the fit against the traced samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BakeResult {
    pub visibility_sh: Vec<[f64; MAX_SH_COEFFS]>,
    pub residuals: Vec<f64>,
}

impl BakeResult {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_residual(&self) -> f64 {
        if self.residuals.is_empty() {
            0.0
        } else {
            self.residuals.iter().sum::<f64>() / self.residuals.len() as f64
        }
    }

    /// Residuals as consecutive little-endian 32-bit floats.
    pub fn residual_report_bytes(&self) -> Vec<u8> {
        self.residuals.iter().flat_map(|r| (*r as f32).to_le_bytes()).collect()
    }

    /// Writes the fitted coefficients into `scene`.
    pub fn apply(&self, scene: &mut Scene) -> Result<()> {
        if scene.len() != self.visibility_sh.len() {
            return Err(Error::invalid("bake result does not match the scene size"));
        }
        for (p, v) in scene.points.iter_mut().zip(&self.visibility_sh) {
            p.visibility_sh = *v;
        }
        Ok(())
    }
}

/// Traces `rays_per_point` sphere directions from every point and fits the
/// transmittance with the scene's visibility SH degree.
pub fn bake_visibility(scene: &Scene, bvh: &Bvh, rays_per_point: usize, k_offset: f64) -> Result<BakeResult> {
    let degree = scene.sh_degrees.visibility;
    let k = coeff_count(degree);
    if rays_per_point < k {
        return Err(Error::invalid(format!(
            "{rays_per_point} rays cannot determine {k} visibility coefficients"
        )));
    }
    if bvh.leaf_count() != scene.len() {
        return Err(Error::invalid("BVH was built for a different scene"));
    }
    let dirs = sphere_lattice(rays_per_point);
    let design = DMatrix::from_fn(rays_per_point, k, |r, c| basis(degree, &dirs[r])[c]);
    let normal = design.transpose() * &design;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::invalid("visibility fit is singular for this ray count"))?;
    let pinv = chol.solve(&design.transpose());

    let fits = par::map_range(scene.len(), |i| {
        let samples = DVector::from_iterator(
            rays_per_point,
            dirs.iter().map(|d| traced_visibility(bvh, scene, i, d, k_offset, DEFAULT_T_STOP)),
        );
        let coeffs = &pinv * &samples;
        let fit = &design * &coeffs;
        let rms = ((fit - samples).norm_squared() / rays_per_point as f64).sqrt();
        let mut v = [0.0; MAX_SH_COEFFS];
        v[..k].copy_from_slice(coeffs.as_slice());
        (v, rms)
    });
    let (visibility_sh, residuals) = fits.into_iter().unzip();
    Ok(BakeResult {
        visibility_sh,
        residuals,
    })
}

/// Bakes and writes the result into `scene`.
pub fn bake_visibility_into(scene: &mut Scene, bvh: &Bvh, rays_per_point: usize, k_offset: f64) -> Result<BakeResult> {
    let result = bake_visibility(scene, bvh, rays_per_point, k_offset)?;
    result.apply(scene)?;
    Ok(result)
}

/// Clamped visibility expansion of point coefficients in direction `d`.
pub fn evaluate_visibility(coeffs: &[f64; MAX_SH_COEFFS], degree: u32, d: &nalgebra::Vector3<f64>) -> f64 {
    let y = basis(degree, d);
    (0..coeff_count(degree)).map(|k| coeffs[k] * y[k]).sum::<f64>().clamp(0.0, 1.0)
}
