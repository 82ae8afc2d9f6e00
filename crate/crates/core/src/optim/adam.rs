//! Bias-corrected first/second moment optimizer with per-group step sizes.

use serde::{Deserialize, Serialize};

use crate::gaussian::{param, PARAM_COUNT};
use crate::render::SceneGrad;
use crate::scene::Scene;

/// Moment decay rates and the denominator stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update of `params` in place; `lrs` holds a step size per entry.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        assert!(params.len() == self.m.len() && grads.len() == self.m.len() && lrs.len() == self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lrs[i] * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Step sizes per attribute group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Initial position step, multiplied by the scene extent.
    pub position: f64,
    /// Position step at the end of the geometry stage, also times extent.
    pub position_final: f64,
    pub rotation: f64,
    /// Step on the logarithm of the scale.
    pub scale: f64,
    /// Step on the opacity logit.
    pub opacity: f64,
    pub color_dc: f64,
    pub color_rest: f64,
    pub normal: f64,
    pub base_color: f64,
    pub roughness: f64,
    pub metallic: f64,
    pub visibility: f64,
    pub local_light: f64,
    pub env_light: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color_dc: 2.5e-3,
            color_rest: 2.5e-3 / 20.0,
            normal: 2.5e-3,
            base_color: 2.5e-3,
            roughness: 2.5e-3,
            metallic: 2.5e-3,
            visibility: 2.5e-3,
            local_light: 1e-3,
            env_light: 1e-3,
        }
    }
}

/// Which attribute groups an update may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMask {
    pub geometry: bool,
    pub color: bool,
    pub normal: bool,
    pub material: bool,
    pub visibility: bool,
    pub local_light: bool,
    pub env_light: bool,
}

impl GroupMask {
    pub const ALL: GroupMask = GroupMask {
        geometry: true,
        color: true,
        normal: true,
        material: true,
        visibility: true,
        local_light: true,
        env_light: true,
    };
}

impl LearningRates {
    /// Per-parameter step sizes for one point, zero for masked groups.
    pub fn per_param(&self, position: f64, mask: GroupMask) -> [f64; PARAM_COUNT] {
        let mut lr = [0.0; PARAM_COUNT];
        let mut set = |range: std::ops::Range<usize>, v: f64, on: bool| {
            if on {
                lr[range].iter_mut().for_each(|x| *x = v);
            }
        };
        set(param::MEAN, position, mask.geometry);
        set(param::ROTATION, self.rotation, mask.geometry);
        set(param::SCALE, self.scale, mask.geometry);
        set(param::OPACITY, self.opacity, mask.geometry);
        set(param::COLOR_SH.start..param::COLOR_SH.start + 3, self.color_dc, mask.color);
        set(param::COLOR_SH.start + 3..param::COLOR_SH.end, self.color_rest, mask.color);
        set(param::NORMAL, self.normal, mask.normal);
        set(param::BASE_COLOR, self.base_color, mask.material);
        set(param::ROUGHNESS, self.roughness, mask.material);
        set(param::METALLIC, self.metallic, mask.material);
        set(param::VISIBILITY_SH, self.visibility, mask.visibility);
        set(param::LOCAL_LIGHT_SH, self.local_light, mask.local_light);
        lr
    }
}

/// Optimizer state for every point and the environment light.
///
/// Scales are updated in log space; every point is projected back onto the
/// valid parameter set after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOptimizer {
    pub config: AdamConfig,
    pub step: u64,
    pub point_m: Vec<[f64; PARAM_COUNT]>,
    pub point_v: Vec<[f64; PARAM_COUNT]>,
    pub env: Adam,
}

impl SceneOptimizer {
    pub fn new(scene: &Scene, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            point_m: vec![[0.0; PARAM_COUNT]; scene.len()],
            point_v: vec![[0.0; PARAM_COUNT]; scene.len()],
            env: Adam::new(scene.env_light.coeffs.len(), config),
        }
    }

    /// Applies one update with per-parameter step sizes `lrs`.
    pub fn step(&mut self, scene: &mut Scene, grad: &SceneGrad, lrs: &[f64; PARAM_COUNT], env_lr: f64) {
        assert_eq!(grad.points.len(), scene.len(), "gradient and scene disagree on point count");
        assert_eq!(self.point_m.len(), scene.len(), "optimizer state and scene disagree on point count");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        let m_all = &mut self.point_m;
        let v_all = &mut self.point_v;
        for (((p, g), m), v) in scene.points.iter_mut().zip(&grad.points).zip(m_all.iter_mut()).zip(v_all.iter_mut()) {
            let mut theta = p.params();
            let mut g = *g;
            for k in param::SCALE {
                g[k] *= theta[k];
                theta[k] = theta[k].ln();
            }
            for k in 0..PARAM_COUNT {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                if lrs[k] != 0.0 {
                    theta[k] -= lrs[k] * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                }
            }
            for k in param::SCALE {
                theta[k] = theta[k].exp();
            }
            p.read_params(&theta);
            p.project_valid();
        }
        if env_lr != 0.0 {
            let lrs = vec![env_lr; scene.env_light.coeffs.len()];
            self.env.update(&mut scene.env_light.coeffs, &grad.env, &lrs);
        }
    }

    /// Reorders state after density control: entry `i` of `origin` names
    /// the old point whose moments the new point `i` inherits, or `None` for
    /// fresh zero moments.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let pick = |old: &Vec<[f64; PARAM_COUNT]>| -> Vec<[f64; PARAM_COUNT]> {
            origin.iter().map(|o| o.map_or([0.0; PARAM_COUNT], |i| old[i])).collect()
        };
        self.point_m = pick(&self.point_m);
        self.point_v = pick(&self.point_v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::Vector3;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 3.0];
        a.update(&mut p, &[0.0; 3], &[0.1; 3]);
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_step_size_against_gradient() {
        let mut a = Adam::new(3, AdamConfig::default());
        let mut p = [0.0; 3];
        a.update(&mut p, &[5.0, -0.01, 1e3], &[0.1; 3]);
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - 0.1 * s).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let target = [1.5, -0.7, 0.2];
        let scales = [1.0, 10.0, 0.1];
        let mut a = Adam::new(3, AdamConfig::default());
        let mut p = [0.0; 3];
        for _ in 0..5000 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * scales[i] * (p[i] - target[i])).collect();
            a.update(&mut p, &g, &[0.01; 3]);
        }
        for i in 0..3 {
            assert!((p[i] - target[i]).abs() < 1e-4, "{p:?}");
        }
    }

    #[test]
    fn scene_step_respects_masks_and_projection() {
        let mut r = fixtures::rng(4);
        let p = fixtures::random_point(&mut r, Vector3::zeros(), 1.0, (0.1, 0.2));
        let mut scene = Scene::new(vec![p.clone()]);
        let mut opt = SceneOptimizer::new(&scene, AdamConfig::default());
        let mut grad = SceneGrad::zeros(1, scene.env_light.coeffs.len());
        grad.points[0] = [1.0; PARAM_COUNT];
        let mask = GroupMask {
            geometry: false,
            color: false,
            normal: false,
            material: true,
            visibility: false,
            local_light: false,
            env_light: false,
        };
        let mut lr = LearningRates::default();
        lr.roughness = 10.0;
        opt.step(&mut scene, &grad, &lr.per_param(0.0, mask), 0.0);
        let q = &scene.points[0];
        assert_eq!(q.mean, p.mean);
        assert_eq!(q.color_sh, p.color_sh);
        assert_eq!(q.roughness, crate::shading::ROUGHNESS_FLOOR);
        assert!((q.base_color[0] - (p.base_color[0] - 2.5e-3)).abs() < 1e-12);
    }

    #[test]
    fn scale_steps_are_multiplicative() {
        let mut r = fixtures::rng(5);
        let p = fixtures::random_point(&mut r, Vector3::zeros(), 1.0, (0.1, 0.2));
        let mut scene = Scene::new(vec![p.clone()]);
        let mut opt = SceneOptimizer::new(&scene, AdamConfig::default());
        let mut grad = SceneGrad::zeros(1, scene.env_light.coeffs.len());
        for k in param::SCALE {
            grad.points[0][k] = 1.0;
        }
        opt.step(&mut scene, &grad, &LearningRates::default().per_param(0.0, GroupMask::ALL), 0.0);
        for k in 0..3 {
            let ratio = scene.points[0].scale[k] / p.scale[k];
            assert!((ratio - (-5e-3f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn remap_keeps_and_zeroes_moments() {
        let scene = Scene::new(vec![Default::default(); 2]);
        let mut opt = SceneOptimizer::new(&scene, AdamConfig::default());
        opt.point_m[1][0] = 3.0;
        opt.remap(&[Some(1), None, Some(1)]);
        assert_eq!(opt.point_m.len(), 3);
        assert_eq!(opt.point_m[0][0], 3.0);
        assert_eq!(opt.point_m[1][0], 0.0);
        assert_eq!(opt.point_m[2][0], 3.0);
    }
}
