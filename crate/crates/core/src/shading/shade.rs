use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::brdf::{g1_ggx, ndf_sg_unchecked};
use super::sampling::{hemisphere_lattice, orthonormal_basis, orthonormal_basis_jacobians, to_world};
use super::ROUGHNESS_FLOOR;
use crate::bvh::{trace_transmittance, Bvh, Ray, BAKE_K_OFFSET, DEFAULT_T_STOP};
use crate::error::{Error, Result};
use crate::gaussian::GaussianPoint;
use crate::scene::Scene;
use crate::sh::{basis, basis_grad, coeff_count, MAX_SH_COEFFS};

/// Where the visibility term of the incident light comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMode {
    /// Per-point visibility SH, clamped to `[0, 1]`.
    BakedSh,
    /// Transmittance traced through the scene BVH.
    Traced,
    /// Everything visible.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    Linear,
    Srgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadingConfig {
    pub n_samples: usize,
    pub enable_specular: bool,
    pub enable_local_light: bool,
    pub visibility_mode: VisibilityMode,
    /// Transfer applied when the shaded image is written or compared to LDR data.
    pub gamma: Gamma,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        Self {
            n_samples: super::ONLINE_SAMPLES,
            enable_specular: true,
            enable_local_light: true,
            visibility_mode: VisibilityMode::BakedSh,
            gamma: Gamma::Srgb,
        }
    }
}

impl ShadingConfig {
    pub fn online() -> Self {
        Self::default()
    }

    pub fn offline() -> Self {
        Self {
            n_samples: super::OFFLINE_SAMPLES,
            visibility_mode: VisibilityMode::Traced,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        Ok(())
    }
}

/// Shaded color of one Gaussian plus by-products used by the optimizer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShadeOutput {
    /// Linear radiance toward the viewer.
    pub color: [f64; 3],
    /// Mean visibility over the hemisphere samples.
    pub ambient_occlusion: f64,
    /// Sum over samples of the white-light deviation `sum_c |L_c - mean(L)|`.
    pub light_deviation: f64,
}

/// Gradients of one shading evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadeGrad {
    /// With respect to the stored (unnormalized) normal.
    pub normal: Vector3<f64>,
    /// With respect to the outgoing direction.
    pub omega_o: Vector3<f64>,
    pub base_color: [f64; 3],
    pub roughness: f64,
    pub metallic: f64,
    pub visibility_sh: [f64; MAX_SH_COEFFS],
    pub local_light_sh: [[f64; 3]; 4],
}

impl Default for ShadeGrad {
    fn default() -> Self {
        Self {
            normal: Vector3::zeros(),
            omega_o: Vector3::zeros(),
            base_color: [0.0; 3],
            roughness: 0.0,
            metallic: 0.0,
            visibility_sh: [0.0; MAX_SH_COEFFS],
            local_light_sh: [[0.0; 3]; 4],
        }
    }
}

/// Shading state shared by every Gaussian of one scene snapshot.
pub struct Shader<'a> {
    scene: &'a Scene,
    cfg: ShadingConfig,
    lattice: Vec<Vector3<f64>>,
    solid_angle: f64,
    bvh: Option<&'a Bvh>,
    basis_degree: u32,
}

/// Per-sample intermediate values shared by the forward and backward passes.
struct SampleEval {
    omega: Vector3<f64>,
    cos_i: f64,
    y: [f64; MAX_SH_COEFFS],
    vis_raw: f64,
    vis: f64,
    env_raw: [f64; 3],
    local_raw: [f64; 3],
    radiance: [f64; 3],
}

impl<'a> Shader<'a> {
    /// `bvh` is required for [`VisibilityMode::Traced`].
    pub fn new(scene: &'a Scene, cfg: &ShadingConfig, bvh: Option<&'a Bvh>) -> Result<Self> {
        cfg.validate()?;
        if cfg.visibility_mode == VisibilityMode::Traced && bvh.is_none() {
            return Err(Error::invalid("traced visibility requires a BVH"));
        }
        scene.env_light.validate()?;
        if scene.env_light.channels != 3 {
            return Err(Error::invalid("environment light must have three channels"));
        }
        let d = scene.sh_degrees;
        Ok(Self {
            scene,
            cfg: cfg.clone(),
            lattice: hemisphere_lattice(cfg.n_samples),
            solid_angle: 2.0 * PI / cfg.n_samples as f64,
            bvh,
            basis_degree: d.env.max(d.visibility).max(d.local_light).max(scene.env_light.degree),
        })
    }

    pub fn config(&self) -> &ShadingConfig {
        &self.cfg
    }

    pub fn sample_count(&self) -> usize {
        self.lattice.len()
    }

    fn eval_sample(&self, point: &GaussianPoint, index: Option<usize>, omega: Vector3<f64>, cos_i: f64) -> SampleEval {
        let degrees = self.scene.sh_degrees;
        let y = basis(self.basis_degree, &omega);
        let (vis_raw, vis) = match self.cfg.visibility_mode {
            VisibilityMode::None => (1.0, 1.0),
            VisibilityMode::BakedSh => {
                let raw: f64 = (0..coeff_count(degrees.visibility))
                    .map(|k| point.visibility_sh[k] * y[k])
                    .sum();
                (raw, raw.clamp(0.0, 1.0))
            }
            VisibilityMode::Traced => {
                let bvh = self.bvh.expect("checked at construction");
                let ray = Ray {
                    origin: point.mean + omega * (BAKE_K_OFFSET * point.max_scale()),
                    direction: omega,
                    t_min: 0.0,
                    t_max: f64::INFINITY,
                    exclude: index,
                };
                let t = trace_transmittance(bvh, self.scene, &ray, DEFAULT_T_STOP);
                (t, t)
            }
        };
        let env = &self.scene.env_light;
        let mut env_raw = [0.0; 3];
        for (k, yk) in y.iter().enumerate().take(coeff_count(env.degree)) {
            for (c, e) in env_raw.iter_mut().enumerate() {
                *e += env.coeffs[k * 3 + c] * yk;
            }
        }
        let mut local_raw = [0.0; 3];
        if self.cfg.enable_local_light {
            for (k, yk) in y.iter().enumerate().take(coeff_count(degrees.local_light)) {
                for (c, l) in local_raw.iter_mut().enumerate() {
                    *l += point.local_light_sh[k][c] * yk;
                }
            }
        }
        let radiance = std::array::from_fn(|c| vis * env_raw[c].max(0.0) + local_raw[c].max(0.0));
        SampleEval {
            omega,
            cos_i,
            y,
            vis_raw,
            vis,
            env_raw,
            local_raw,
            radiance,
        }
    }

    /// `L_i = V L_global + L_local` at `point` from direction `omega_i`.
    pub fn incident(&self, point: &GaussianPoint, index: Option<usize>, omega_i: &Vector3<f64>) -> [f64; 3] {
        self.eval_sample(point, index, *omega_i, omega_i.dot(&point.unit_normal()))
            .radiance
    }

    /// Numerical integration of the rendering equation over the lattice
    /// about the point's normal.
    pub fn shade(&self, point: &GaussianPoint, index: Option<usize>, omega_o: &Vector3<f64>) -> ShadeOutput {
        let n = point.unit_normal();
        let (t, b) = orthonormal_basis(&n);
        let fd = super::brdf::diffuse_brdf(point.base_color, point.metallic);
        let spec = SpecularSetup::new(point, &n, omega_o, self.cfg.enable_specular);
        let mut out = ShadeOutput::default();
        for l in &self.lattice {
            let s = self.eval_sample(point, index, to_world(l, &n, &t, &b), l.z);
            let fs = spec.eval(&s.omega, s.cos_i);
            let w = s.cos_i * self.solid_angle;
            for c in 0..3 {
                out.color[c] += (fd[c] + fs[c]) * s.radiance[c] * w;
            }
            out.ambient_occlusion += s.vis;
            out.light_deviation += light_deviation(&s.radiance);
        }
        out.ambient_occlusion /= self.lattice.len() as f64;
        for c in out.color.iter_mut() {
            *c = c.max(0.0);
        }
        out
    }

    /// Reverse pass of [`Shader::shade`] for upstream color gradient `grad_color`
    /// plus a white-light penalty of `light_weight * sum_c |L_c - mean(L)|`
    /// per sample. Environment gradients are added into `env_grad`.
    pub fn backward(
        &self,
        point: &GaussianPoint,
        index: Option<usize>,
        omega_o: &Vector3<f64>,
        grad_color: [f64; 3],
        light_weight: f64,
        env_grad: &mut [f64],
    ) -> ShadeGrad {
        let degrees = self.scene.sh_degrees;
        let n_vis = coeff_count(degrees.visibility);
        let n_env = coeff_count(self.scene.env_light.degree);
        let n_local = coeff_count(degrees.local_light);
        let n = point.unit_normal();
        let (t, b) = orthonormal_basis(&n);
        let (jt, jb) = orthonormal_basis_jacobians(&n);
        let fd = super::brdf::diffuse_brdf(point.base_color, point.metallic);
        let spec = SpecularSetup::new(point, &n, omega_o, self.cfg.enable_specular);
        let env = &self.scene.env_light;

        let mut g = ShadeGrad::default();
        let mut g_n = Vector3::zeros();
        let mut g_fd = [0.0; 3];
        let mut spec_acc = SpecularGrad::default();
        let baked = self.cfg.visibility_mode == VisibilityMode::BakedSh;

        for l in &self.lattice {
            let s = self.eval_sample(point, index, to_world(l, &n, &t, &b), l.z);
            let fs = spec.eval(&s.omega, s.cos_i);
            let w = s.cos_i * self.solid_angle;
            let g_light = light_deviation_grad(&s.radiance, light_weight);
            let mut g_rad = [0.0; 3];
            let mut g_fs = [0.0; 3];
            for c in 0..3 {
                g_rad[c] = grad_color[c] * (fd[c] + fs[c]) * w + g_light[c];
                g_fd[c] += grad_color[c] * s.radiance[c] * w;
                g_fs[c] = grad_color[c] * s.radiance[c] * w;
            }
            let mut g_omega = spec.backward(&s.omega, s.cos_i, &g_fs, &mut spec_acc);

            // Incident light.
            let mut g_y = [0.0; MAX_SH_COEFFS];
            if baked && s.vis_raw > 0.0 && s.vis_raw < 1.0 {
                let g_vis: f64 = (0..3).map(|c| g_rad[c] * s.env_raw[c].max(0.0)).sum();
                for k in 0..n_vis {
                    g.visibility_sh[k] += g_vis * s.y[k];
                    g_y[k] += g_vis * point.visibility_sh[k];
                }
            }
            for c in 0..3 {
                if s.env_raw[c] > 0.0 {
                    let ge = g_rad[c] * s.vis;
                    for k in 0..n_env {
                        env_grad[k * 3 + c] += ge * s.y[k];
                        g_y[k] += ge * env.coeffs[k * 3 + c];
                    }
                }
                if self.cfg.enable_local_light && s.local_raw[c] > 0.0 {
                    for k in 0..n_local {
                        g.local_light_sh[k][c] += g_rad[c] * s.y[k];
                        g_y[k] += g_rad[c] * point.local_light_sh[k][c];
                    }
                }
            }
            let dy = basis_grad(self.basis_degree, &s.omega);
            for k in 0..coeff_count(self.basis_degree) {
                if g_y[k] != 0.0 {
                    g_omega += Vector3::new(dy[k][0], dy[k][1], dy[k][2]) * g_y[k];
                }
            }
            // omega = t(n) lx + b(n) ly + n lz
            g_n += g_omega * l.z + jt.transpose() * (g_omega * l.x) + jb.transpose() * (g_omega * l.y);
        }

        // Diffuse term.
        let k_d = (1.0 - point.metallic) / PI;
        for c in 0..3 {
            g.base_color[c] += g_fd[c] * k_d;
            g.metallic -= g_fd[c] * point.base_color[c] / PI;
        }
        // Specular material terms.
        for c in 0..3 {
            g.base_color[c] += spec_acc.f0[c] * point.metallic;
            g.metallic += spec_acc.f0[c] * (point.base_color[c] - 0.04);
        }
        if point.roughness > ROUGHNESS_FLOOR {
            g.roughness += spec_acc.roughness;
        }
        g_n += spec_acc.normal;
        g.omega_o = spec_acc.omega_o;

        let norm = point.normal.norm();
        g.normal = (g_n - n * n.dot(&g_n)) / norm;
        g
    }
}

/// White-light deviation `sum_c |L_c - mean(L)|`, evaluated as
/// `sum_c |3 L_c - sum(L)| / 3` so that equal channels give exactly zero.
pub fn light_deviation(l: &[f64; 3]) -> f64 {
    let total = l[0] + l[1] + l[2];
    l.iter().map(|c| (3.0 * c - total).abs()).sum::<f64>() / 3.0
}

fn light_deviation_grad(l: &[f64; 3], weight: f64) -> [f64; 3] {
    if weight == 0.0 {
        return [0.0; 3];
    }
    let total = l[0] + l[1] + l[2];
    let s = l.map(|c| {
        let d = 3.0 * c - total;
        d.signum() * f64::from(d != 0.0)
    });
    let avg = (s[0] + s[1] + s[2]) / 3.0;
    s.map(|si| weight * (si - avg))
}

/// Quantities of the specular lobe that depend only on the point and viewer.
struct SpecularSetup {
    enabled: bool,
    n: Vector3<f64>,
    omega_o: Vector3<f64>,
    cos_o: f64,
    r: f64,
    f0: [f64; 3],
}

#[derive(Default)]
struct SpecularGrad {
    f0: [f64; 3],
    roughness: f64,
    normal: Vector3<f64>,
    omega_o: Vector3<f64>,
}

impl SpecularSetup {
    fn new(point: &GaussianPoint, n: &Vector3<f64>, omega_o: &Vector3<f64>, enabled: bool) -> Self {
        let cos_o = n.dot(omega_o);
        Self {
            enabled: enabled && cos_o > 0.0,
            n: *n,
            omega_o: *omega_o,
            cos_o,
            r: point.roughness.max(ROUGHNESS_FLOOR),
            f0: super::brdf::f0(point.base_color, point.metallic),
        }
    }

    #[inline]
    fn eval(&self, omega: &Vector3<f64>, cos_i: f64) -> [f64; 3] {
        if !self.enabled || cos_i <= 0.0 {
            return [0.0; 3];
        }
        let hv = omega + self.omega_o;
        let hn = hv.norm();
        if hn < 1e-12 {
            return [0.0; 3];
        }
        let h = hv / hn;
        let d = ndf_sg_unchecked(h.dot(&self.n), self.r);
        let g = g1_ggx(cos_i, self.r) * g1_ggx(self.cos_o, self.r);
        let k = d * g / (4.0 * cos_i * self.cos_o);
        let w = (1.0 - self.omega_o.dot(&h)).powi(5);
        std::array::from_fn(|c| (self.f0[c] + (1.0 - self.f0[c]) * w) * k)
    }

    /// Accumulates material, normal and viewer gradients; returns the
    /// gradient with respect to the incident direction.
    fn backward(&self, omega: &Vector3<f64>, cos_i: f64, g_fs: &[f64; 3], acc: &mut SpecularGrad) -> Vector3<f64> {
        if !self.enabled || cos_i <= 0.0 {
            return Vector3::zeros();
        }
        let hv = omega + self.omega_o;
        let hn = hv.norm();
        if hn < 1e-12 {
            return Vector3::zeros();
        }
        let h = hv / hn;
        let r = self.r;
        let r2 = r * r;
        let nh = h.dot(&self.n);
        let oh = self.omega_o.dot(&h);
        let co = self.cos_o;
        let d = ndf_sg_unchecked(nh, r);
        let (g1i, dg1i_dz, dg1i_dr) = g1_with_grad(cos_i, r);
        let (g1o, dg1o_dz, dg1o_dr) = g1_with_grad(co, r);
        let g = g1i * g1o;
        let denom = 4.0 * cos_i * co;
        let k = d * g / denom;
        let one_m = 1.0 - oh;
        let w = one_m.powi(5);

        let mut g_k = 0.0;
        let mut g_oh = 0.0;
        for c in 0..3 {
            let f = self.f0[c] + (1.0 - self.f0[c]) * w;
            g_k += g_fs[c] * f;
            let g_f = g_fs[c] * k;
            acc.f0[c] += g_f * (1.0 - w);
            g_oh += g_f * (1.0 - self.f0[c]) * (-5.0 * one_m.powi(4));
        }
        let g_d = g_k * g / denom;
        let g_g = g_k * d / denom;
        let mut g_co = -g_k * k / co;
        g_co += g_g * g1i * dg1o_dz;
        acc.roughness += g_g * (dg1i_dr * g1o + g1i * dg1o_dr);
        acc.roughness += g_d * d * (-2.0 / r - 4.0 * (nh - 1.0) / (r2 * r));
        let g_nh = g_d * d * 2.0 / r2;
        let _ = dg1i_dz;

        let g_h = self.n * g_nh + self.omega_o * g_oh;
        let g_hv = (g_h - h * h.dot(&g_h)) / hn;
        acc.normal += h * g_nh + self.omega_o * g_co;
        acc.omega_o += h * g_oh + self.n * g_co + g_hv;
        g_hv
    }
}

/// `G1(z)` with its derivatives in `z` and `r`.
#[inline]
fn g1_with_grad(z: f64, r: f64) -> (f64, f64, f64) {
    let r2 = r * r;
    let s = (r2 + (1.0 - r2) * z * z).sqrt();
    let den = z + s;
    let g = 2.0 * z / den;
    let ds_dz = (1.0 - r2) * z / s;
    let ds_dr = r * (1.0 - z * z) / s;
    let dg_dz = (2.0 * den - 2.0 * z * (1.0 + ds_dz)) / (den * den);
    let dg_dr = -2.0 * z / (den * den) * ds_dr;
    (g, dg_dz, dg_dr)
}

/// Incident radiance at a standalone point (no self-exclusion).
pub fn incident_light(
    point: &GaussianPoint,
    scene: &Scene,
    omega_i: &Vector3<f64>,
    cfg: &ShadingConfig,
    bvh: Option<&Bvh>,
) -> Result<[f64; 3]> {
    Ok(Shader::new(scene, cfg, bvh)?.incident(point, None, omega_i))
}

/// PBR color of a standalone point seen from direction `omega_o`.
pub fn shade_gaussian(
    point: &GaussianPoint,
    omega_o: &Vector3<f64>,
    scene: &Scene,
    cfg: &ShadingConfig,
    bvh: Option<&Bvh>,
) -> Result<[f64; 3]> {
    Ok(Shader::new(scene, cfg, bvh)?.shade(point, None, omega_o).color)
}
