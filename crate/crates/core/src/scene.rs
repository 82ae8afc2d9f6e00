use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{quat_norm, Aabb, GaussianPoint, UNIT_TOLERANCE};
use crate::sh::{coeff_count, ShBlock, MAX_SH_COEFFS};

/// SH degrees used by every point of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShDegrees {
    pub color: u32,
    pub visibility: u32,
    pub local_light: u32,
    pub env: u32,
}

impl Default for ShDegrees {
    fn default() -> Self {
        Self {
            color: 3,
            visibility: 3,
            local_light: 1,
            env: 3,
        }
    }
}

impl ShDegrees {
    pub fn validate(&self) -> Result<()> {
        if self.color > 3 || self.visibility > 3 || self.env > 3 {
            return Err(Error::invalid("SH degrees above 3 are not supported"));
        }
        if self.local_light > 1 {
            return Err(Error::invalid("local light SH degree must be 0 or 1"));
        }
        Ok(())
    }
}

/// A set of relightable Gaussians under one global environment light.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<GaussianPoint>,
    /// Global environment light, three channels.
    pub env_light: ShBlock,
    pub sh_degrees: ShDegrees,
}

impl Default for Scene {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Scene {
    /// Scene with default degrees and a uniform unit environment.
    pub fn new(points: Vec<GaussianPoint>) -> Self {
        let degrees = ShDegrees::default();
        Self {
            points,
            env_light: ShBlock::constant(degrees.env, &[1.0, 1.0, 1.0]),
            sh_degrees: degrees,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Box around every mean.
    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for p in &self.points {
            b.grow(&p.mean);
        }
        b
    }

    /// Radius of the sphere around the mean centroid enclosing all means.
    pub fn extent(&self) -> f64 {
        if self.points.is_empty() {
            return 1.0;
        }
        let c = self.points.iter().map(|p| p.mean).sum::<Vector3<f64>>() / self.points.len() as f64;
        self.points
            .iter()
            .map(|p| (p.mean - c).norm())
            .fold(0.0, f64::max)
            .max(1e-6)
    }

    /// Checks every declared invariant of the scene and its points.
    pub fn validate(&self) -> Result<()> {
        self.sh_degrees.validate()?;
        self.env_light.validate()?;
        if self.env_light.degree != self.sh_degrees.env || self.env_light.channels != 3 {
            return Err(Error::invalid("environment SH does not match the declared degree"));
        }
        let nc = coeff_count(self.sh_degrees.color);
        let nv = coeff_count(self.sh_degrees.visibility);
        let nl = coeff_count(self.sh_degrees.local_light);
        for (i, p) in self.points.iter().enumerate() {
            let bad = |what: &str| Error::invalid(format!("point {i}: {what}"));
            if (quat_norm(&p.rotation) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(bad("rotation is not a unit quaternion"));
            }
            if (p.normal.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(bad("normal is not unit length"));
            }
            if p.scale.iter().any(|s| !(*s > 0.0)) {
                return Err(bad("non-positive scale"));
            }
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !p.base_color.iter().all(|b| in_unit(*b)) || !in_unit(p.roughness) || !in_unit(p.metallic) {
                return Err(bad("material attribute outside [0, 1]"));
            }
            if p.color_sh[nc..MAX_SH_COEFFS].iter().flatten().any(|c| *c != 0.0)
                || p.visibility_sh[nv..].iter().any(|c| *c != 0.0)
                || p.local_light_sh[nl..].iter().flatten().any(|c| *c != 0.0)
            {
                return Err(bad("SH coefficients above the declared degree"));
            }
        }
        Ok(())
    }
}
