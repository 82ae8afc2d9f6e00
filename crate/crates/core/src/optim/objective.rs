//! Weighted training objective and its gradient with respect to a scene.

use serde::{Deserialize, Serialize};

use super::losses::{
    build_target_image, edge_weights, loss_depth_grad, loss_l1_grad, loss_mask_entropy_grad,
    loss_normal_consistency_grad, smoothness_with_weights, visibility_loss_with_targets, VisibilityPair,
};
use super::ssim::loss_ssim_grad;
use crate::bvh::{traced_visibility, Bvh, BAKE_K_OFFSET, DEFAULT_T_STOP};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::param;
use crate::render::{world_normals_from_depth, Channel, ChannelGrads, FloatImage, Frame, RenderBuffers, SceneGrad};
use crate::scene::Scene;
use crate::shading::{linear_to_srgb, linear_to_srgb_grad, Gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Geometry and view-dependent color.
    #[serde(rename = "1")]
    Geometry,
    /// Materials, lighting and visibility on top of stage-one terms.
    #[serde(rename = "2")]
    Material,
}

impl Stage {
    pub fn number(self) -> u32 {
        match self {
            Stage::Geometry => 1,
            Stage::Material => 2,
        }
    }

    /// Channels the stage's losses read.
    pub fn channels(self) -> Vec<Channel> {
        let mut ch = vec![Channel::Color, Channel::Normal, Channel::PseudoNormal, Channel::Opacity, Channel::Depth];
        if self == Stage::Material {
            ch.extend([Channel::Pbr, Channel::BaseColor, Channel::Roughness, Channel::Metallic]);
        }
        ch
    }
}

/// Per-term loss weights. Stage-one terms also apply in stage two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub normal: f64,
    pub normal_mvs: f64,
    pub depth: f64,
    pub entropy: f64,
    pub base_color: f64,
    pub light: f64,
    pub smooth_b: f64,
    pub smooth_r: f64,
    pub smooth_m: f64,
    pub visibility: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.8,
            ssim: 0.2,
            normal: 0.01,
            normal_mvs: 0.01,
            depth: 1.0,
            entropy: 0.1,
            base_color: 0.01,
            light: 0.01,
            smooth_b: 6e-3,
            smooth_r: 2e-3,
            smooth_m: 2e-3,
            visibility: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            l1: 0.0,
            ssim: 0.0,
            normal: 0.0,
            normal_mvs: 0.0,
            depth: 0.0,
            entropy: 0.0,
            base_color: 0.0,
            light: 0.0,
            smooth_b: 0.0,
            smooth_r: 0.0,
            smooth_m: 0.0,
            visibility: 0.0,
        }
    }

    fn all(&self) -> [f64; 12] {
        [
            self.l1,
            self.ssim,
            self.normal,
            self.normal_mvs,
            self.depth,
            self.entropy,
            self.base_color,
            self.light,
            self.smooth_b,
            self.smooth_r,
            self.smooth_m,
            self.visibility,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.all().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Ground truth for one view, with derived targets precomputed.
#[derive(Debug, Clone)]
pub struct Supervision {
    pub camera: Camera,
    /// Display-referred RGB in `[0, 1]`.
    pub image: FloatImage,
    /// One channel, 1 inside the object.
    pub mask: Option<FloatImage>,
    /// Externally estimated depth along the camera axis.
    pub depth: Option<FloatImage>,
    pub depth_valid: Option<Vec<bool>>,
    /// World-space normals from the external depth, zero where invalid.
    pub normal_mvs: Option<FloatImage>,
    /// Highlight- and shadow-reduced image used for the base-color prior.
    pub target: FloatImage,
    /// Per-pixel edge-aware smoothness weights.
    pub edge_weights: Vec<f64>,
}

impl Supervision {
    pub fn new(
        camera: Camera,
        image: FloatImage,
        mask: Option<FloatImage>,
        depth: Option<(FloatImage, Vec<bool>)>,
    ) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        if image.width != w || image.height != h || image.channels != 3 {
            return Err(Error::invalid(format!(
                "image is {}x{}x{}, camera expects {w}x{h}x3",
                image.width, image.height, image.channels
            )));
        }
        if let Some(m) = &mask {
            if m.width != w || m.height != h || m.channels != 1 {
                return Err(Error::invalid("mask does not match the camera"));
            }
        }
        let (depth, depth_valid, normal_mvs) = match depth {
            Some((d, valid)) => {
                if d.width != w || d.height != h || d.channels != 1 || valid.len() != d.pixel_count() {
                    return Err(Error::invalid("depth map does not match the camera"));
                }
                let masked = FloatImage {
                    data: d.data.iter().zip(&valid).map(|(v, ok)| if *ok { *v } else { f64::NAN }).collect(),
                    ..d.clone()
                };
                let n = world_normals_from_depth(&masked, &camera);
                (Some(d), Some(valid), Some(n))
            }
            None => (None, None, None),
        };
        Ok(Self {
            target: build_target_image(&image),
            edge_weights: edge_weights(&image),
            camera,
            image,
            mask,
            depth,
            depth_valid,
            normal_mvs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Every evaluated term and the weighted total.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossBreakdown {
    fn push(&mut self, name: &str, weight: f64, value: f64) {
        self.total += weight * value;
        self.terms.push(LossTerm {
            name: name.to_string(),
            weight,
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    /// `sum weight * value` recomputed from the terms.
    pub fn recompose(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }
}

fn scaled(img: &FloatImage, w: f64) -> FloatImage {
    img.map(|v| v * w)
}

/// Image-space terms: breakdown plus gradients with respect to rendered maps.
fn image_terms(
    stage: Stage,
    buffers: &RenderBuffers,
    sup: &Supervision,
    weights: &LossWeights,
    gamma: Gamma,
) -> Result<(LossBreakdown, ChannelGrads)> {
    let mut out = LossBreakdown::default();
    let mut grads = ChannelGrads::new();

    let color = buffers.require(Channel::Color)?;
    let (l1, g) = loss_l1_grad(color, &sup.image)?;
    out.push("l1", weights.l1, l1);
    grads.accumulate(Channel::Color, &scaled(&g, weights.l1));
    let (ss, g) = loss_ssim_grad(color, &sup.image)?;
    out.push("ssim", weights.ssim, ss);
    grads.accumulate(Channel::Color, &scaled(&g, weights.ssim));

    let normal = buffers.require(Channel::Normal)?;
    let pseudo = buffers.require(Channel::PseudoNormal)?;
    let (ln, g) = loss_normal_consistency_grad(normal, pseudo, sup.mask.as_ref())?;
    out.push("normal", weights.normal, ln);
    grads.accumulate(Channel::Normal, &scaled(&g, weights.normal));

    if let (Some(d), Some(valid), Some(n_mvs)) = (&sup.depth, &sup.depth_valid, &sup.normal_mvs) {
        let (lm, g) = loss_normal_consistency_grad(normal, n_mvs, sup.mask.as_ref())?;
        out.push("normal_mvs", weights.normal_mvs, lm);
        grads.accumulate(Channel::Normal, &scaled(&g, weights.normal_mvs));
        let depth = buffers.require(Channel::Depth)?;
        let (ld, g) = loss_depth_grad(depth, d, valid)?;
        out.push("depth", weights.depth, ld);
        grads.accumulate(Channel::Depth, &scaled(&g, weights.depth));
    }

    if let Some(mask) = &sup.mask {
        let opacity = buffers.require(Channel::Opacity)?;
        let (le, g) = loss_mask_entropy_grad(opacity, mask)?;
        out.push("entropy", weights.entropy, le);
        grads.accumulate(Channel::Opacity, &scaled(&g, weights.entropy));
    }

    if stage == Stage::Material {
        let pbr = buffers.require(Channel::Pbr)?;
        let display = match gamma {
            Gamma::Srgb => pbr.map(linear_to_srgb),
            Gamma::Linear => pbr.clone(),
        };
        let chain = |g: &FloatImage, w: f64| -> FloatImage {
            let mut out = scaled(g, w);
            if gamma == Gamma::Srgb {
                for (o, x) in out.data.iter_mut().zip(&pbr.data) {
                    *o *= linear_to_srgb_grad(*x);
                }
            }
            out
        };
        let (l1, g) = loss_l1_grad(&display, &sup.image)?;
        out.push("l1_pbr", weights.l1, l1);
        grads.accumulate(Channel::Pbr, &chain(&g, weights.l1));
        let (ss, g) = loss_ssim_grad(&display, &sup.image)?;
        out.push("ssim_pbr", weights.ssim, ss);
        grads.accumulate(Channel::Pbr, &chain(&g, weights.ssim));

        let base = buffers.require(Channel::BaseColor)?;
        let (lb, g) = loss_l1_grad(base, &sup.target)?;
        out.push("base_color", weights.base_color, lb);
        grads.accumulate(Channel::BaseColor, &scaled(&g, weights.base_color));

        for (name, ch, w) in [
            ("smooth_b", Channel::BaseColor, weights.smooth_b),
            ("smooth_r", Channel::Roughness, weights.smooth_r),
            ("smooth_m", Channel::Metallic, weights.smooth_m),
        ] {
            let map = buffers.require(ch)?;
            let (ls, g) = smoothness_with_weights(map, &sup.edge_weights, &sup.image)?;
            out.push(name, w, ls);
            grads.accumulate(ch, &scaled(&g, w));
        }
    }
    Ok((out, grads))
}

/// Weighted sum of the image-space terms of `stage`.
///
/// Light whiteness and visibility need the shading samples and the BVH and
/// are added by [`evaluate`].
pub fn total_loss(stage: Stage, buffers: &RenderBuffers, supervision: &Supervision, weights: &LossWeights) -> Result<LossBreakdown> {
    Ok(image_terms(stage, buffers, supervision, weights, Gamma::Srgb)?.0)
}

/// Like [`total_loss`] with an explicit display transfer for the PBR channel.
pub fn total_loss_with_gamma(
    stage: Stage,
    buffers: &RenderBuffers,
    supervision: &Supervision,
    weights: &LossWeights,
    gamma: Gamma,
) -> Result<LossBreakdown> {
    Ok(image_terms(stage, buffers, supervision, weights, gamma)?.0)
}

/// Full objective for one rendered view and its gradient.
///
/// In the material stage this adds the light-whiteness term over the
/// frame's shading samples and, when `bvh` is given, the visibility term
/// over `pairs`.
pub fn evaluate(
    stage: Stage,
    frame: &Frame,
    scene: &Scene,
    bvh: Option<&Bvh>,
    supervision: &Supervision,
    weights: &LossWeights,
    pairs: &[VisibilityPair],
) -> Result<(LossBreakdown, SceneGrad)> {
    weights.validate()?;
    let gamma = frame.request().shading.gamma;
    let (mut breakdown, grads) = image_terms(stage, &frame.buffers, supervision, weights, gamma)?;
    let mut light_weight = 0.0;
    if stage == Stage::Material {
        breakdown.push("light", weights.light, frame.light_regularizer());
        let n = frame.light_sample_count();
        if n > 0 {
            light_weight = weights.light / n as f64;
        }
    }
    let mut grad = frame.backward(scene, bvh, &grads, light_weight)?;
    if stage == Stage::Material {
        if let Some(bvh) = bvh {
            let targets = crate::par::map_slice(pairs, |(i, d)| {
                traced_visibility(bvh, scene, *i, d, BAKE_K_OFFSET, DEFAULT_T_STOP)
            });
            let vis = visibility_loss_with_targets(scene, pairs, &targets)?;
            breakdown.push("visibility", weights.visibility, vis.value);
            for (i, g) in vis.grads {
                for (k, v) in g.iter().enumerate() {
                    grad.points[i][param::VISIBILITY_SH.start + k] += weights.visibility * v;
                }
            }
        }
    }
    Ok((breakdown, grad))
}

/// Peak signal-to-noise ratio of `pred` against `gt` for unit peak.
pub fn psnr(pred: &FloatImage, gt: &FloatImage) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len().max(1) as f64;
    Ok(-10.0 * mse.log10())
}
