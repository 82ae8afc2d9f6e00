//! Scalar loss terms and their gradients with respect to rendered maps.

use nalgebra::Vector3;
use rand::Rng;

use crate::bvh::{traced_visibility, Bvh, BAKE_K_OFFSET, DEFAULT_T_STOP};
use crate::error::{Error, Result};
use crate::render::FloatImage;
use crate::scene::Scene;
use crate::sh::{basis, coeff_count, MAX_SH_COEFFS};

/// Clamp applied to opacity inside the mask entropy.
pub const ENTROPY_EPS: f64 = 1e-6;
/// Sharpness of the highlight/shadow blend in [`build_target_image`].
pub const TARGET_PSI: f64 = 5.0;

fn mask_at(mask: Option<&FloatImage>, pixel: usize) -> bool {
    mask.map_or(true, |m| m.data[pixel * m.channels] > 0.5)
}

fn check_mask(img: &FloatImage, mask: Option<&FloatImage>) -> Result<()> {
    if let Some(m) = mask {
        if m.width != img.width || m.height != img.height {
            return Err(Error::invalid(format!(
                "mask is {}x{}, image is {}x{}",
                m.width, m.height, img.width, img.height
            )));
        }
    }
    Ok(())
}

/// Mean absolute difference over every pixel and channel.
pub fn loss_l1(pred: &FloatImage, gt: &FloatImage) -> Result<f64> {
    Ok(loss_l1_grad(pred, gt)?.0)
}

pub fn loss_l1_grad(pred: &FloatImage, gt: &FloatImage) -> Result<(f64, FloatImage)> {
    pred.check_same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    let mut grad = FloatImage::new(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let d = p - t;
        sum += d.abs();
        *g = sign(d) / n;
    }
    Ok((sum / n, grad))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean of `|N - N_ref|` over pixels that are inside `mask` and where the
/// reference is a nonzero vector.
pub fn loss_normal_consistency(n: &FloatImage, n_ref: &FloatImage, mask: Option<&FloatImage>) -> Result<f64> {
    Ok(loss_normal_consistency_grad(n, n_ref, mask)?.0)
}

pub fn loss_normal_consistency_grad(
    n: &FloatImage,
    n_ref: &FloatImage,
    mask: Option<&FloatImage>,
) -> Result<(f64, FloatImage)> {
    n.check_same_shape(n_ref)?;
    check_mask(n, mask)?;
    let c = n.channels;
    let mut grad = FloatImage::new(n.width, n.height, c);
    let valid: Vec<usize> = (0..n.pixel_count())
        .filter(|&i| mask_at(mask, i) && n_ref.data[i * c..(i + 1) * c].iter().any(|v| *v != 0.0))
        .collect();
    if valid.is_empty() {
        return Ok((0.0, grad));
    }
    let count = valid.len() as f64;
    let mut sum = 0.0;
    for i in valid {
        let d: Vec<f64> = (0..c).map(|k| n.data[i * c + k] - n_ref.data[i * c + k]).collect();
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        sum += len;
        if len > 0.0 {
            for k in 0..c {
                grad.data[i * c + k] = d[k] / len / count;
            }
        }
    }
    Ok((sum / count, grad))
}

/// Mean `|D - D_ref|` over pixels where `valid` is set.
pub fn loss_depth(d: &FloatImage, d_ref: &FloatImage, valid: &[bool]) -> Result<f64> {
    Ok(loss_depth_grad(d, d_ref, valid)?.0)
}

pub fn loss_depth_grad(d: &FloatImage, d_ref: &FloatImage, valid: &[bool]) -> Result<(f64, FloatImage)> {
    d.check_same_shape(d_ref)?;
    if valid.len() != d.pixel_count() {
        return Err(Error::invalid("depth validity mask has the wrong length"));
    }
    let mut grad = FloatImage::new(d.width, d.height, 1);
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let diff = d.data[i] - d_ref.data[i];
        sum += diff.abs();
        grad.data[i] = sign(diff) / count as f64;
    }
    Ok((sum / count as f64, grad))
}

/// Mean binary cross-entropy between accumulated opacity and an object mask.
pub fn loss_mask_entropy(o: &FloatImage, mask: &FloatImage) -> Result<f64> {
    Ok(loss_mask_entropy_grad(o, mask)?.0)
}

pub fn loss_mask_entropy_grad(o: &FloatImage, mask: &FloatImage) -> Result<(f64, FloatImage)> {
    o.check_same_shape(mask)?;
    let n = o.data.len().max(1) as f64;
    let mut grad = FloatImage::new(o.width, o.height, o.channels);
    let mut sum = 0.0;
    for ((g, ov), m) in grad.data.iter_mut().zip(&o.data).zip(&mask.data) {
        let oc = ov.clamp(ENTROPY_EPS, 1.0 - ENTROPY_EPS);
        sum += -m * oc.ln() - (1.0 - m) * (1.0 - oc).ln();
        if *ov > ENTROPY_EPS && *ov < 1.0 - ENTROPY_EPS {
            *g = (-m / oc + (1.0 - m) / (1.0 - oc)) / n;
        }
    }
    Ok((sum / n, grad))
}

/// Ground-truth image with highlights and shadows pulled toward mid tones,
/// blended per pixel by the brightest channel.
pub fn build_target_image(gt: &FloatImage) -> FloatImage {
    let mut out = gt.clone();
    let c = gt.channels;
    for (src, dst) in gt.data.chunks(c).zip(out.data.chunks_mut(c)) {
        let v = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = 1.0 / (1.0 + (-TARGET_PSI * (v - 0.5)).exp());
        for (s, d) in src.iter().zip(dst.iter_mut()) {
            let shadow = 1.0 - (1.0 - s) * (1.0 - s);
            let highlight = s * s;
            *d = w * highlight + (1.0 - w) * shadow;
        }
    }
    out
}

/// Mean `|C_b - C_target|`.
pub fn loss_base_color(cb: &FloatImage, target: &FloatImage) -> Result<f64> {
    loss_l1(cb, target)
}

/// Mean over samples of `sum_c |L_c - mean(L)|`.
pub fn loss_light_reg(samples: &[[f64; 3]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(crate::shading::light_deviation)
        .sum::<f64>()
        / samples.len() as f64
}

/// Per-pixel edge weight `exp(-|grad C|_1)` from forward differences summed
/// over channels; the last row and column use zero differences.
pub fn edge_weights(gt: &FloatImage) -> Vec<f64> {
    let (w, h, c) = (gt.width as usize, gt.height as usize, gt.channels);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut g = 0.0;
            for k in 0..c {
                let v = gt.data[i * c + k];
                if x + 1 < w {
                    g += (gt.data[(i + 1) * c + k] - v).abs();
                }
                if y + 1 < h {
                    g += (gt.data[(i + w) * c + k] - v).abs();
                }
            }
            out[i] = (-g).exp();
        }
    }
    out
}

/// Mean over pixels of `|grad attr|_1 * exp(-|grad C_gt|_1)`.
pub fn loss_smoothness(attr: &FloatImage, gt: &FloatImage) -> Result<f64> {
    Ok(smoothness_with_weights(attr, &edge_weights(gt), gt)?.0)
}

pub fn loss_smoothness_grad(attr: &FloatImage, gt: &FloatImage) -> Result<(f64, FloatImage)> {
    smoothness_with_weights(attr, &edge_weights(gt), gt)
}

pub(crate) fn smoothness_with_weights(attr: &FloatImage, weights: &[f64], gt: &FloatImage) -> Result<(f64, FloatImage)> {
    if attr.width != gt.width || attr.height != gt.height {
        return Err(Error::invalid("smoothness maps are not aligned"));
    }
    let (w, h, c) = (attr.width as usize, attr.height as usize, attr.channels);
    let n = (w * h).max(1) as f64;
    let mut grad = FloatImage::new(attr.width, attr.height, c);
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let wt = weights[i];
            for k in 0..c {
                let v = attr.data[i * c + k];
                if x + 1 < w {
                    let d = attr.data[(i + 1) * c + k] - v;
                    sum += wt * d.abs();
                    let g = wt * sign(d) / n;
                    grad.data[(i + 1) * c + k] += g;
                    grad.data[i * c + k] -= g;
                }
                if y + 1 < h {
                    let d = attr.data[(i + w) * c + k] - v;
                    sum += wt * d.abs();
                    let g = wt * sign(d) / n;
                    grad.data[(i + w) * c + k] += g;
                    grad.data[i * c + k] -= g;
                }
            }
        }
    }
    Ok((sum / n, grad))
}

/// A point index paired with a unit query direction.
pub type VisibilityPair = (usize, Vector3<f64>);

/// `count` pairs with uniformly drawn points and directions.
pub fn sample_visibility_pairs(scene: &Scene, count: usize, rng: &mut impl Rng) -> Vec<VisibilityPair> {
    if scene.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let i = rng.gen_range(0..scene.len());
            (i, crate::fixtures::random_unit(rng))
        })
        .collect()
}

/// Visibility loss together with its gradient in the visibility SH of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityLoss {
    pub value: f64,
    /// `(point, coefficient gradient)` for every point touched by a pair.
    pub grads: Vec<(usize, [f64; MAX_SH_COEFFS])>,
}

/// Mean over pairs of `(V_sh(w) - T(w))^2`, `V_sh` clamped to `[0, 1]` and
/// `T` traced from the point through the BVH.
pub fn loss_visibility(scene: &Scene, bvh: &Bvh, pairs: &[VisibilityPair]) -> Result<VisibilityLoss> {
    let targets = crate::par::map_slice(pairs, |(i, d)| traced_visibility(bvh, scene, *i, d, BAKE_K_OFFSET, DEFAULT_T_STOP));
    visibility_loss_with_targets(scene, pairs, &targets)
}

pub(crate) fn visibility_loss_with_targets(scene: &Scene, pairs: &[VisibilityPair], targets: &[f64]) -> Result<VisibilityLoss> {
    let mut out = VisibilityLoss {
        value: 0.0,
        grads: Vec::new(),
    };
    if pairs.is_empty() {
        return Ok(out);
    }
    let degree = scene.sh_degrees.visibility;
    let nk = coeff_count(degree);
    let n = pairs.len() as f64;
    let mut by_point: std::collections::BTreeMap<usize, [f64; MAX_SH_COEFFS]> = Default::default();
    for ((i, d), t) in pairs.iter().zip(targets) {
        let p = scene
            .points
            .get(*i)
            .ok_or_else(|| Error::invalid(format!("visibility pair names point {i} of {}", scene.len())))?;
        let y = basis(degree, d);
        let raw: f64 = (0..nk).map(|k| p.visibility_sh[k] * y[k]).sum();
        let v = raw.clamp(0.0, 1.0);
        let diff = v - t;
        out.value += diff * diff / n;
        if raw > 0.0 && raw < 1.0 {
            let g = by_point.entry(*i).or_insert([0.0; MAX_SH_COEFFS]);
            for k in 0..nk {
                g[k] += 2.0 * diff * y[k] / n;
            }
        }
    }
    out.grads = by_point.into_iter().collect();
    Ok(out)
}
