use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::raster::Frame;
use super::{Channel, FloatImage, ALPHA_MAX};
use crate::bvh::Bvh;
use crate::error::{Error, Result};
use crate::gaussian::{param, PARAM_COUNT};
use crate::par;
use crate::scene::Scene;
use crate::sh::{basis, basis_grad, coeff_count};
use crate::shading::Shader;

/// Gradient of a scalar loss with respect to rendered channel pixels.
#[derive(Debug, Clone, Default)]
pub struct ChannelGrads {
    pub maps: BTreeMap<Channel, FloatImage>,
}

impl ChannelGrads {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `grad` into the gradient of `channel`.
    pub fn accumulate(&mut self, channel: Channel, grad: &FloatImage) {
        match self.maps.get_mut(&channel) {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&grad.data) {
                    *a += b;
                }
            }
            None => {
                self.maps.insert(channel, grad.clone());
            }
        }
    }
}

/// Gradients with respect to every point parameter and the environment light.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad {
    /// Per point, in [`crate::gaussian::GaussianPoint::write_params`] order.
    pub points: Vec<[f64; PARAM_COUNT]>,
    /// Environment SH, basis-major like the scene block.
    pub env: Vec<f64>,
    /// Per point, norm of the screen-space mean gradient in NDC units.
    pub view_grad: Vec<f64>,
    /// Per point, whether it was splatted in this view.
    pub visible: Vec<bool>,
}

impl SceneGrad {
    pub fn zeros(points: usize, env_len: usize) -> Self {
        Self {
            points: vec![[0.0; PARAM_COUNT]; points],
            env: vec![0.0; env_len],
            view_grad: vec![0.0; points],
            visible: vec![false; points],
        }
    }

    pub fn add(&mut self, other: &SceneGrad) {
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.env.iter_mut().zip(&other.env) {
            *a += b;
        }
        for (a, b) in self.view_grad.iter_mut().zip(&other.view_grad) {
            *a += b;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
    }
}

/// Per-splat screen-space gradients gathered from pixels.
#[derive(Clone)]
struct SplatAccum {
    features: Vec<f64>,
    mean2d: Vector2<f64>,
    /// Gradient with respect to the conic matrix entries `(00, 01, 11)`,
    /// the off-diagonal counted once per symmetric entry.
    conic: [f64; 3],
    opacity: f64,
}

impl SplatAccum {
    fn zeros(width: usize) -> Self {
        Self {
            features: vec![0.0; width],
            mean2d: Vector2::zeros(),
            conic: [0.0; 3],
            opacity: 0.0,
        }
    }

    fn add(&mut self, other: &SplatAccum) {
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            *a += b;
        }
        self.mean2d += other.mean2d;
        for c in 0..3 {
            self.conic[c] += other.conic[c];
        }
        self.opacity += other.opacity;
    }
}

impl Frame {
    /// Reverse pass: pixel gradients in `grads` plus a light-whiteness penalty
    /// of `light_weight` per incident-light sample of every shaded splat.
    pub fn backward(&self, scene: &Scene, bvh: Option<&Bvh>, grads: &ChannelGrads, light_weight: f64) -> Result<SceneGrad> {
        let cam = &self.request.camera;
        for (ch, g) in &grads.maps {
            if g.width != cam.width || g.height != cam.height || g.channels != ch.components() {
                return Err(Error::invalid(format!("gradient for '{ch}' has the wrong shape")));
            }
        }
        let fw = self.layout.width;
        let n_tiles = self.tile_ranges.len();
        let per_tile = par::map_range(n_tiles, |t| self.backward_tile(t, grads));

        let mut acc: Vec<SplatAccum> = vec![SplatAccum::zeros(fw); self.splats.len()];
        for (t, tile) in per_tile.into_iter().enumerate() {
            let (start, _) = self.tile_ranges[t];
            for (j, a) in tile.into_iter().enumerate() {
                acc[self.tile_list[start + j] as usize].add(&a);
            }
        }

        let shader = if self.layout.offset(Channel::Pbr).is_some() {
            Some(Shader::new(scene, &self.request.shading, bvh)?)
        } else {
            None
        };
        let env_len = scene.env_light.coeffs.len();
        let per_splat = par::map_range(self.splats.len(), |si| self.splat_backward(scene, shader.as_ref(), si, &acc[si], light_weight, env_len));

        let mut out = SceneGrad::zeros(scene.len(), env_len);
        for (si, (g, env, view)) in per_splat.into_iter().enumerate() {
            let idx = self.splats[si].index;
            for (a, b) in out.points[idx].iter_mut().zip(g.iter()) {
                *a += b;
            }
            if let Some(env) = env {
                for (a, b) in out.env.iter_mut().zip(&env) {
                    *a += b;
                }
            }
            out.view_grad[idx] += view;
            out.visible[idx] = true;
        }
        Ok(out)
    }

    fn backward_tile(&self, t: usize, grads: &ChannelGrads) -> Vec<SplatAccum> {
        let cam = &self.request.camera;
        let (x0, y0, x1, y1) = self.tile_pixels(t);
        let (start, end) = self.tile_ranges[t];
        let list = &self.tile_list[start..end];
        let fw = self.layout.width;
        let mut acc = vec![SplatAccum::zeros(fw); list.len()];
        let bg = self.request.background;
        let channel_grads: Vec<(usize, usize, bool, Option<&FloatImage>)> = self
            .layout
            .entries()
            .map(|(ch, o)| (o, ch.components(), ch.uses_background(), grads.maps.get(&ch)))
            .collect();
        let mut gpix = vec![0.0; fw];
        let mut rest = vec![0.0; fw];
        for y in y0..y1 {
            for x in x0..x1 {
                let pix = (y * cam.width + x) as usize;
                let t_final = self.buffers.final_transmittance[pix];
                let mut any = false;
                for &(o, nc, uses_bg, g) in &channel_grads {
                    for c in 0..nc {
                        gpix[o + c] = g.map_or(0.0, |g| g.data[pix * nc + c]);
                        any |= gpix[o + c] != 0.0;
                        rest[o + c] = if uses_bg { t_final * bg[c] } else { 0.0 };
                    }
                }
                if !any {
                    continue;
                }
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut tr = t_final;
                for j in (0..self.last[pix] as usize).rev() {
                    let si = list[j] as usize;
                    let s = &self.splats[si];
                    let (a, d) = s.alpha_at(&p);
                    if a < self.request.alpha_min {
                        continue;
                    }
                    let alpha = a.min(ALPHA_MAX);
                    let t_i = tr / (1.0 - alpha);
                    let f = &self.features[si * fw..(si + 1) * fw];
                    let e = &mut acc[j];
                    let mut g_alpha = 0.0;
                    for k in 0..fw {
                        g_alpha += gpix[k] * (t_i * f[k] - rest[k] / (1.0 - alpha));
                        e.features[k] += t_i * alpha * gpix[k];
                        rest[k] += t_i * alpha * f[k];
                    }
                    tr = t_i;
                    if a <= ALPHA_MAX {
                        let gauss = a / s.opacity;
                        e.opacity += g_alpha * gauss;
                        let g_q = -0.5 * a * g_alpha;
                        e.mean2d += (s.conic * d) * (-2.0 * g_q);
                        e.conic[0] += g_q * d.x * d.x;
                        e.conic[1] += g_q * d.x * d.y;
                        e.conic[2] += g_q * d.y * d.y;
                    }
                }
            }
        }
        acc
    }

    fn splat_backward(
        &self,
        scene: &Scene,
        shader: Option<&Shader>,
        si: usize,
        acc: &SplatAccum,
        light_weight: f64,
        env_len: usize,
    ) -> (Box<[f64; PARAM_COUNT]>, Option<Vec<f64>>, f64) {
        let cam = &self.request.camera;
        let s = &self.splats[si];
        let p = &scene.points[s.index];
        let mut g = Box::new([0.0; PARAM_COUNT]);
        let center = cam.center();
        let w = cam.rotation;
        let mut g_mu = Vector3::zeros();
        let mut g_t = Vector3::zeros();

        for (ch, o) in self.layout.entries() {
            let f = &acc.features[o..o + ch.components()];
            match ch {
                Channel::Color => {
                    let raw = self.color_raw[si];
                    let gc: [f64; 3] = std::array::from_fn(|c| if raw[c] > 0.0 { f[c] } else { 0.0 });
                    if gc.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let v = p.mean - center;
                    let len = v.norm();
                    let dir = v / len;
                    let deg = scene.sh_degrees.color;
                    let y = basis(deg, &dir);
                    let dy = basis_grad(deg, &dir);
                    let mut g_dir = Vector3::zeros();
                    for k in 0..coeff_count(deg) {
                        let mut gk = 0.0;
                        for c in 0..3 {
                            g[param::COLOR_SH.start + 3 * k + c] += gc[c] * y[k];
                            gk += gc[c] * p.color_sh[k][c];
                        }
                        g_dir += Vector3::new(dy[k][0], dy[k][1], dy[k][2]) * gk;
                    }
                    g_mu += (g_dir - dir * dir.dot(&g_dir)) / len;
                }
                Channel::Depth => g_t.z += f[0],
                Channel::Normal => {
                    let gn = Vector3::new(f[0], f[1], f[2]);
                    let n = p.unit_normal();
                    let gq = (gn - n * n.dot(&gn)) / p.normal.norm();
                    for c in 0..3 {
                        g[param::NORMAL.start + c] += gq[c];
                    }
                }
                Channel::BaseColor => {
                    for c in 0..3 {
                        g[param::BASE_COLOR.start + c] += f[c];
                    }
                }
                Channel::Roughness => g[param::ROUGHNESS.start] += f[0],
                Channel::Metallic => g[param::METALLIC.start] += f[0],
                Channel::Pbr | Channel::Opacity | Channel::Visibility | Channel::PseudoNormal => {}
            }
        }

        let mut env = None;
        if let (Some(shader), Some(o)) = (shader, self.layout.offset(Channel::Pbr)) {
            let shaded = &self.shaded[si];
            let gc: [f64; 3] = std::array::from_fn(|c| if shaded.color[c] > 0.0 { acc.features[o + c] } else { 0.0 });
            if gc.iter().any(|v| *v != 0.0) || light_weight != 0.0 {
                let v = center - p.mean;
                let len = v.norm();
                let omega = v / len;
                let mut env_grad = vec![0.0; env_len];
                let sg = shader.backward(p, Some(s.index), &omega, gc, light_weight, &mut env_grad);
                g_mu -= (sg.omega_o - omega * omega.dot(&sg.omega_o)) / len;
                for c in 0..3 {
                    g[param::NORMAL.start + c] += sg.normal[c];
                    g[param::BASE_COLOR.start + c] += sg.base_color[c];
                }
                g[param::ROUGHNESS.start] += sg.roughness;
                g[param::METALLIC.start] += sg.metallic;
                for k in 0..sg.visibility_sh.len() {
                    g[param::VISIBILITY_SH.start + k] += sg.visibility_sh[k];
                }
                for k in 0..4 {
                    for c in 0..3 {
                        g[param::LOCAL_LIGHT_SH.start + 3 * k + c] += sg.local_light_sh[k][c];
                    }
                }
                env = Some(env_grad);
            }
        }

        // Opacity through the sigmoid.
        let o = s.opacity;
        g[param::OPACITY.start] += acc.opacity * o * (1.0 - o);

        // Screen-space mean.
        let jac = cam.projection_jacobian(&s.t);
        g_t += jac.transpose() * acc.mean2d;

        // Conic -> screen covariance -> world covariance and Jacobian.
        let g_conic = Matrix2::new(acc.conic[0], acc.conic[1], acc.conic[1], acc.conic[2]);
        let g_cov2d = -(s.conic * g_conic * s.conic);
        let m: Matrix2x3<f64> = jac * w;
        let cov = p.covariance();
        let g_cov: Matrix3<f64> = m.transpose() * g_cov2d * m;
        let g_m: Matrix2x3<f64> = g_cov2d * m * cov * 2.0;
        let g_j: Matrix2x3<f64> = g_m * w.transpose();
        let (fx, fy) = (cam.fx, cam.fy);
        let (tx, ty, tz) = (s.t.x, s.t.y, s.t.z);
        let iz2 = 1.0 / (tz * tz);
        let iz3 = iz2 / tz;
        g_t.x += -fx * iz2 * g_j[(0, 2)];
        g_t.y += -fy * iz2 * g_j[(1, 2)];
        g_t.z += -fx * iz2 * g_j[(0, 0)] - fy * iz2 * g_j[(1, 1)]
            + 2.0 * fx * tx * iz3 * g_j[(0, 2)]
            + 2.0 * fy * ty * iz3 * g_j[(1, 2)];
        g_mu += w.transpose() * g_t;
        for c in 0..3 {
            g[param::MEAN.start + c] += g_mu[c];
        }

        // Sigma = (R S)(R S)^T.
        let r = p.rotation_matrix();
        let rs = r * Matrix3::from_diagonal(&p.scale);
        let g_rs = (g_cov + g_cov.transpose()) * rs;
        let g_r = g_rs * Matrix3::from_diagonal(&p.scale);
        let rtg = r.transpose() * g_rs;
        for k in 0..3 {
            g[param::SCALE.start + k] += rtg[(k, k)];
        }
        let gq = quat_grad_from_matrix_grad(&p.rotation, &g_r);
        for c in 0..4 {
            g[param::ROTATION.start + c] += gq[c];
        }

        let view = Vector2::new(acc.mean2d.x * 0.5 * f64::from(cam.width), acc.mean2d.y * 0.5 * f64::from(cam.height)).norm();
        (g, env, view)
    }
}

/// Gradient with respect to an unnormalized `[w, x, y, z]` quaternion given
/// the gradient with respect to its rotation matrix.
pub(crate) fn quat_grad_from_matrix_grad(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = crate::gaussian::quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| (gh[i] - qh[i] * dot) / n)
}
