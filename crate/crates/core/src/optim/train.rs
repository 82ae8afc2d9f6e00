//! Two-stage training driver.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, GroupMask, LearningRates, SceneOptimizer};
use super::densify::{adaptive_density_control, DensifyConfig, GradStats};
use super::losses::sample_visibility_pairs;
use super::objective::{evaluate, psnr, LossWeights, Stage, Supervision};
use crate::bvh::{bake_visibility_into, build_lbvh, Bvh, BAKE_K_OFFSET, DEFAULT_BAKE_RAYS};
use crate::error::{Error, Result};
use crate::fixtures::{random_unit, rng};
use crate::gaussian::GaussianPoint;
use crate::render::{Channel, Frame, RenderRequest};
use crate::scene::Scene;
use crate::sh::ShBlock;
use crate::shading::{linear_to_srgb, Gamma, ShadingConfig, VisibilityMode};

/// Training and held-out views.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub train: Vec<Supervision>,
    pub holdout: Vec<Supervision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Incident-light samples per point while training.
    pub n_samples: usize,
    pub weights: LossWeights,
    pub densify: DensifyConfig,
    pub learning_rates: LearningRates,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Background radiance behind the object, also used for the mask loss.
    pub background: [f64; 3],
    pub learn_env_light: bool,
    pub enable_local_light: bool,
    pub enable_specular: bool,
    /// Display transfer applied to the shaded image before photometric losses.
    pub gamma: Gamma,
    /// Initial environment light, 48 coefficients, basis-major. Uniform white when absent.
    pub initial_env: Option<Vec<f64>>,
    /// Iterations between visibility re-bakes in the material stage; 0 bakes once.
    pub rebake_interval: usize,
    pub bake_rays: usize,
    /// (point, direction) pairs per iteration for the visibility loss.
    pub visibility_batch: usize,
    /// Iterations between held-out evaluations; 0 disables them.
    pub eval_interval: usize,
    /// Points drawn for the visual-hull initialization.
    pub init_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 30_000,
            stage2_iters: 10_000,
            n_samples: crate::shading::ONLINE_SAMPLES,
            weights: LossWeights::default(),
            densify: DensifyConfig::default(),
            learning_rates: LearningRates::default(),
            adam: AdamConfig::default(),
            seed: 0,
            background: [0.0; 3],
            learn_env_light: true,
            enable_local_light: true,
            enable_specular: true,
            gamma: Gamma::Srgb,
            initial_env: None,
            rebake_interval: 500,
            bake_rays: DEFAULT_BAKE_RAYS,
            visibility_batch: 256,
            eval_interval: 500,
            init_points: 5_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.densify.validate()?;
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if self.init_points == 0 {
            return Err(Error::invalid("init_points must be at least 1"));
        }
        if let Some(env) = &self.initial_env {
            if env.len() != 48 {
                return Err(Error::invalid(format!("initial_env needs 48 coefficients, got {}", env.len())));
            }
        }
        Ok(())
    }

    fn shading(&self) -> ShadingConfig {
        ShadingConfig {
            n_samples: self.n_samples,
            enable_specular: self.enable_specular,
            enable_local_light: self.enable_local_light,
            visibility_mode: VisibilityMode::BakedSh,
            gamma: self.gamma,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub stage: u32,
    #[serde(flatten)]
    pub losses: BTreeMap<String, f64>,
    pub total: f64,
    pub psnr_holdout: Option<f64>,
    pub n_points: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: Scene,
    pub metrics: Vec<MetricsRecord>,
}

/// Scene extent used to scale position steps and the split threshold:
/// 1.1 times the largest distance of a camera center from their mean.
pub fn camera_extent(views: &[Supervision]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.camera.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Point closest, in least squares, to every camera's optical axis.
fn axes_focus(views: &[Supervision]) -> Vector3<f64> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for v in views {
        let c = v.camera.center();
        let d = v.camera.rotation.row(2).transpose();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * c;
    }
    a.try_inverse().map(|inv| inv * b).unwrap_or_else(|| {
        views.iter().map(|v| v.camera.center()).sum::<Vector3<f64>>() / views.len() as f64
    })
}

fn project_pixel(sup: &Supervision, x: &Vector3<f64>) -> Option<(u32, u32)> {
    let t = sup.camera.to_camera(x);
    if t.z <= crate::camera::Z_NEAR {
        return None;
    }
    let p = sup.camera.project_camera_point(&t);
    if p.x < 0.0 || p.y < 0.0 || p.x >= f64::from(sup.camera.width) || p.y >= f64::from(sup.camera.height) {
        return None;
    }
    Some((p.x as u32, p.y as u32))
}

/// Points sampled inside the visual hull of the training masks, colored by
/// the mean of the pixels they project to, with random unit normals.
pub fn initialize_scene(data: &TrainingSet, config: &TrainConfig) -> Result<Scene> {
    let views = &data.train;
    if views.is_empty() {
        return Err(Error::invalid("training set has no views"));
    }
    let center = axes_focus(views);
    let radius = views
        .iter()
        .map(|v| {
            let d = (v.camera.center() - center).norm();
            let hw = f64::from(v.camera.width) / (2.0 * v.camera.fx);
            let hh = f64::from(v.camera.height) / (2.0 * v.camera.fy);
            d * hw.min(hh)
        })
        .fold(f64::INFINITY, f64::min);
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("cameras do not share a visible region"));
    }
    let mut r = rng(config.seed);
    let mut points = Vec::with_capacity(config.init_points);
    let attempts = config.init_points * 200;
    let mut tried = 0usize;
    while points.len() < config.init_points && tried < attempts {
        tried += 1;
        let x = center
            + Vector3::new(
                r.gen_range(-radius..radius),
                r.gen_range(-radius..radius),
                r.gen_range(-radius..radius),
            );
        let mut color = [0.0; 3];
        let mut seen = 0usize;
        let mut inside = true;
        for v in views {
            match project_pixel(v, &x) {
                Some((px, py)) => {
                    if let Some(m) = &v.mask {
                        if m.get(px, py, 0) <= 0.5 {
                            inside = false;
                            break;
                        }
                    }
                    for (c, col) in color.iter_mut().enumerate() {
                        *col += v.image.get(px, py, c);
                    }
                    seen += 1;
                }
                None => {
                    inside = false;
                    break;
                }
            }
        }
        if !inside || seen == 0 {
            continue;
        }
        let mut p = GaussianPoint {
            mean: x,
            ..Default::default()
        };
        p.set_color(color.map(|c| c / seen as f64));
        p.normal = random_unit(&mut r);
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::invalid("no initial point falls inside every view and mask"));
    }
    let hull_volume = (2.0 * radius).powi(3) * points.len() as f64 / tried as f64;
    let spacing = (hull_volume / points.len() as f64).cbrt();
    for p in &mut points {
        p.scale = Vector3::repeat(0.5 * spacing);
        p.set_opacity(0.1);
        p.base_color = [0.5; 3];
        p.roughness = 0.5;
        p.metallic = 0.05;
        p.set_constant_visibility(1.0);
    }
    let mut scene = Scene::new(points);
    scene.env_light = initial_env(config)?;
    Ok(scene)
}

fn initial_env(config: &TrainConfig) -> Result<ShBlock> {
    match &config.initial_env {
        Some(c) => ShBlock::from_coeffs(3, 3, c.clone()),
        None => Ok(ShBlock::constant(3, &[1.0, 1.0, 1.0])),
    }
}

/// Visual-hull initialization followed by [`train_from`].
pub fn train(data: &TrainingSet, config: &TrainConfig, on_record: &mut dyn FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    config.validate()?;
    let scene = initialize_scene(data, config)?;
    train_from(data, scene, config, on_record)
}

/// Mean held-out PSNR of the stage's photometric image.
pub fn holdout_psnr(scene: &Scene, bvh: Option<&Bvh>, views: &[Supervision], stage: Stage, config: &TrainConfig) -> Result<Option<f64>> {
    if views.is_empty() || scene.is_empty() {
        return Ok(None);
    }
    let ch = match stage {
        Stage::Geometry => Channel::Color,
        Stage::Material => Channel::Pbr,
    };
    let mut sum = 0.0;
    for v in views {
        let req = RenderRequest::new(v.camera.clone(), &[ch])
            .with_shading(config.shading())
            .with_background(config.background);
        let frame = Frame::render(scene, &req, bvh)?;
        let mut img = frame.buffers.require(ch)?.clone();
        if ch == Channel::Pbr && config.gamma == Gamma::Srgb {
            img = img.map(linear_to_srgb);
        }
        sum += psnr(&img, &v.image)?;
    }
    Ok(Some(sum / views.len() as f64))
}

fn stage_mask(stage: Stage, config: &TrainConfig) -> GroupMask {
    match stage {
        Stage::Geometry => GroupMask {
            geometry: true,
            color: true,
            normal: true,
            material: false,
            visibility: false,
            local_light: false,
            env_light: false,
        },
        Stage::Material => GroupMask {
            local_light: config.enable_local_light,
            env_light: config.learn_env_light,
            ..GroupMask::ALL
        },
    }
}

/// Runs both stages from `scene`, reporting one record per iteration.
pub fn train_from(
    data: &TrainingSet,
    mut scene: Scene,
    config: &TrainConfig,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training set has no views"));
    }
    scene.validate()?;
    let extent = camera_extent(&data.train);
    let mut optimizer = SceneOptimizer::new(&scene, config.adam);
    let mut stats = GradStats::new(scene.len());
    let mut order_rng = rng(config.seed ^ 0x5eed_0001);
    let mut split_rng = rng(config.seed ^ 0x5eed_0002);
    let mut order: Vec<usize> = Vec::new();
    let mut metrics = Vec::new();
    let lr = &config.learning_rates;
    let total_iters = config.stage1_iters + config.stage2_iters;
    let mut bvh: Option<Bvh> = None;

    for iter in 1..=total_iters {
        let stage = if iter <= config.stage1_iters { Stage::Geometry } else { Stage::Material };
        if scene.is_empty() {
            return Err(Error::invalid("every point was pruned"));
        }
        if order.is_empty() {
            order = (0..data.train.len()).collect();
            order.shuffle(&mut order_rng);
        }
        let view = &data.train[order.pop().expect("non-empty order")];

        if stage == Stage::Material {
            let first = iter == config.stage1_iters + 1;
            match bvh.as_mut() {
                Some(b) if !first => b.refit(&scene)?,
                _ => bvh = Some(build_lbvh(&scene)?),
            }
            let since = iter - config.stage1_iters - 1;
            let rebake = first || (config.rebake_interval > 0 && since % config.rebake_interval == 0);
            if rebake {
                bake_visibility_into(&mut scene, bvh.as_ref().expect("bvh built"), config.bake_rays, BAKE_K_OFFSET)?;
            }
        }

        let req = RenderRequest::new(view.camera.clone(), &stage.channels())
            .with_shading(config.shading())
            .with_background(config.background);
        let frame = Frame::render(&scene, &req, bvh.as_ref())?;
        let pairs = if stage == Stage::Material && config.weights.visibility > 0.0 {
            let mut pr = rng(config.seed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            sample_visibility_pairs(&scene, config.visibility_batch, &mut pr)
        } else {
            Vec::new()
        };
        let (breakdown, grad) = evaluate(stage, &frame, &scene, bvh.as_ref(), view, &config.weights, &pairs)?;
        drop(frame);

        let position_lr = match stage {
            Stage::Geometry => {
                let t = (iter - 1) as f64 / config.stage1_iters.max(1) as f64;
                (lr.position.ln() * (1.0 - t) + lr.position_final.ln() * t).exp() * extent
            }
            Stage::Material => lr.position_final * extent,
        };
        let mask = stage_mask(stage, config);
        let env_lr = if mask.env_light { lr.env_light } else { 0.0 };
        optimizer.step(&mut scene, &grad, &lr.per_param(position_lr, mask), env_lr);

        if stage == Stage::Geometry {
            stats.accumulate(&grad);
            if config.densify.due(iter) {
                let out = adaptive_density_control(&mut scene, &stats, &config.densify, extent, &mut split_rng)?;
                optimizer.remap(&out.origin);
                stats = GradStats::new(scene.len());
            }
        }

        let eval_now = config.eval_interval > 0 && (iter % config.eval_interval == 0 || iter == total_iters);
        let psnr_holdout = if eval_now {
            holdout_psnr(&scene, bvh.as_ref(), &data.holdout, stage, config)?
        } else {
            None
        };
        let record = MetricsRecord {
            iter,
            stage: stage.number(),
            losses: breakdown.terms.iter().map(|t| (t.name.clone(), t.value)).collect(),
            total: breakdown.total,
            psnr_holdout,
            n_points: scene.len(),
        };
        on_record(&record);
        metrics.push(record);
    }
    Ok(TrainOutcome { scene, metrics })
}
