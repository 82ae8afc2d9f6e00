//! Adaptive density control: clone, split and prune by gradient statistics.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::param;
use crate::render::SceneGrad;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub interval: usize,
    pub start: usize,
    pub end: usize,
    /// Mean screen-space positional gradient, normalized device units.
    pub grad_pos_threshold: f64,
    /// Mean norm of the normal gradient.
    pub grad_normal_threshold: f64,
    /// Points whose largest scale exceeds this fraction of the scene
    /// extent are split, smaller ones are cloned.
    pub split_scale_fraction: f64,
    pub split_divisor: f64,
    pub prune_opacity: f64,
    /// Densification stops growing the scene beyond this many points.
    pub max_points: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 500,
            start: 500,
            end: 10_000,
            grad_pos_threshold: 2e-4,
            grad_normal_threshold: 4e-6,
            split_scale_fraction: 0.01,
            split_divisor: 1.6,
            prune_opacity: 0.005,
            max_points: 1_000_000,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start > self.end {
            return Err(Error::invalid("densification start must not exceed end"));
        }
        if !(self.grad_pos_threshold > 0.0 && self.grad_normal_threshold > 0.0) {
            return Err(Error::invalid("densification thresholds must be positive"));
        }
        if self.interval == 0 {
            return Err(Error::invalid("densification interval must be positive"));
        }
        if !(self.split_divisor > 0.0) {
            return Err(Error::invalid("split divisor must be positive"));
        }
        Ok(())
    }

    /// Whether density control runs after iteration `iter` (1-based).
    pub fn due(&self, iter: usize) -> bool {
        iter >= self.start && iter <= self.end && iter % self.interval == 0
    }
}

/// Gradient statistics accumulated since the last density control.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStats {
    pub position: Vec<f64>,
    pub normal: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(points: usize) -> Self {
        Self {
            position: vec![0.0; points],
            normal: vec![0.0; points],
            count: vec![0; points],
        }
    }

    /// Adds one view's gradients for the points it splatted.
    pub fn accumulate(&mut self, grad: &SceneGrad) {
        for i in 0..self.count.len() {
            if grad.visible[i] {
                self.position[i] += grad.view_grad[i];
                let g = &grad.points[i][param::NORMAL];
                self.normal[i] += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                self.count[i] += 1;
            }
        }
    }

    pub fn mean_position(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.position[i] / f64::from(self.count[i])
        }
    }

    pub fn mean_normal(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.normal[i] / f64::from(self.count[i])
        }
    }
}

/// What density control did, and where every new point came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyOutcome {
    /// For each point of the new scene, the old point whose optimizer state
    /// it keeps, or `None` for a newly created point.
    pub origin: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small points and splits large ones whose mean positional or
/// normal gradient exceeds its threshold, then prunes transparent points.
pub fn adaptive_density_control(
    scene: &mut Scene,
    stats: &GradStats,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    cfg.validate()?;
    if stats.count.len() != scene.len() {
        return Err(Error::invalid("gradient statistics do not match the scene"));
    }
    let split_size = cfg.split_scale_fraction * extent;
    let mut budget = cfg.max_points.saturating_sub(scene.len());
    let mut out = DensifyOutcome::default();
    let mut points = Vec::with_capacity(scene.len());
    let mut origin = Vec::with_capacity(scene.len());
    let mut appended = Vec::new();
    let mut appended_origin = Vec::new();
    for (i, p) in scene.points.iter().enumerate() {
        let hot = stats.mean_position(i) > cfg.grad_pos_threshold || stats.mean_normal(i) > cfg.grad_normal_threshold;
        if !hot || budget == 0 {
            points.push(p.clone());
            origin.push(Some(i));
            continue;
        }
        budget -= 1;
        if p.max_scale() <= split_size {
            points.push(p.clone());
            origin.push(Some(i));
            appended.push(p.clone());
            appended_origin.push(None);
            out.cloned += 1;
        } else {
            let r = p.rotation_matrix();
            for _ in 0..2 {
                let z = Vector3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                let mut child = p.clone();
                child.mean = p.mean + r * p.scale.component_mul(&z);
                child.scale = p.scale / cfg.split_divisor;
                appended.push(child);
                appended_origin.push(None);
            }
            out.split += 1;
        }
    }
    points.extend(appended);
    origin.extend(appended_origin);

    let keep: Vec<bool> = points.iter().map(|p| p.opacity() >= cfg.prune_opacity).collect();
    out.pruned = keep.iter().filter(|k| !**k).count();
    scene.points = points.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
    out.origin = origin.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(o, _)| o).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn scene(n: usize) -> Scene {
        let mut r = fixtures::rng(1);
        Scene::new(
            (0..n)
                .map(|_| fixtures::random_point(&mut r, Vector3::zeros(), 1.0, (0.001, 0.002)))
                .collect(),
        )
    }

    #[test]
    fn quiet_scene_is_unchanged() {
        let mut s = scene(5);
        let before = s.clone();
        let stats = GradStats::new(5);
        let out = adaptive_density_control(&mut s, &stats, &DensifyConfig::default(), 2.0, &mut fixtures::rng(0)).unwrap();
        assert_eq!(s, before);
        assert_eq!(out.origin, (0..5).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn small_hot_point_is_cloned() {
        let mut s = scene(3);
        let mut stats = GradStats::new(3);
        stats.position[1] = 1e-3;
        stats.count[1] = 1;
        let out = adaptive_density_control(&mut s, &stats, &DensifyConfig::default(), 2.0, &mut fixtures::rng(0)).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(out.cloned, 1);
        assert_eq!(s.points[3], s.points[1]);
        assert_eq!(out.origin, vec![Some(0), Some(1), Some(2), None]);
    }

    #[test]
    fn normal_gradient_alone_triggers() {
        let mut s = scene(2);
        let mut stats = GradStats::new(2);
        stats.normal[0] = 1e-5;
        stats.count[0] = 2;
        let out = adaptive_density_control(&mut s, &stats, &DensifyConfig::default(), 2.0, &mut fixtures::rng(0)).unwrap();
        assert_eq!(out.cloned, 1);
        stats.normal[0] = 7e-6;
        let mut s = scene(2);
        let out = adaptive_density_control(&mut s, &stats, &DensifyConfig::default(), 2.0, &mut fixtures::rng(0)).unwrap();
        assert_eq!(out.cloned, 0);
    }

    #[test]
    fn large_hot_point_is_split_and_transparent_pruned() {
        let mut s = scene(3);
        s.points[0].scale = Vector3::new(0.5, 0.2, 0.1);
        s.points[2].set_opacity(0.001);
        let parent = s.points[0].clone();
        let mut stats = GradStats::new(3);
        stats.position[0] = 1.0;
        stats.count[0] = 1;
        let out = adaptive_density_control(&mut s, &stats, &DensifyConfig::default(), 2.0, &mut fixtures::rng(0)).unwrap();
        assert_eq!(out.split, 1);
        assert_eq!(out.pruned, 1);
        assert_eq!(s.len(), 3);
        assert_eq!(out.origin, vec![Some(1), None, None]);
        for child in &s.points[1..] {
            assert!((child.scale - parent.scale / 1.6).norm() < 1e-15);
            assert_eq!(child.base_color, parent.base_color);
        }
    }

    #[test]
    fn schedule() {
        let c = DensifyConfig::default();
        assert!(!c.due(499));
        assert!(c.due(500));
        assert!(c.due(10_000));
        assert!(!c.due(10_500));
        assert!(DensifyConfig { start: 10, end: 5, ..c }.validate().is_err());
    }
}
