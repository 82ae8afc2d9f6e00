//! Windowed structural similarity with an analytic gradient.

use crate::error::Result;
use crate::render::FloatImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| {
        let x = i as f64 - half;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "same" convolution of one plane with zero padding.
pub fn blur_plane(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < width {
                    s += t * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = s;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < height {
                    s += t * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = s;
        }
    }
    out
}

fn planes(img: &FloatImage) -> Vec<Vec<f64>> {
    (0..img.channels)
        .map(|c| img.data.iter().skip(c).step_by(img.channels).copied().collect())
        .collect()
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize) -> Stats {
    let mu_x = blur_plane(x, w, h);
    let mu_y = blur_plane(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let bxx = blur_plane(&xx, w, h);
    let byy = blur_plane(&yy, w, h);
    let bxy = blur_plane(&xy, w, h);
    let n = x.len();
    Stats {
        var_x: (0..n).map(|i| bxx[i] - mu_x[i] * mu_x[i]).collect(),
        var_y: (0..n).map(|i| byy[i] - mu_y[i] * mu_y[i]).collect(),
        cov: (0..n).map(|i| bxy[i] - mu_x[i] * mu_y[i]).collect(),
        mu_x,
        mu_y,
    }
}

/// Per-pixel, per-channel SSIM values, interleaved like the inputs.
pub fn ssim_map(pred: &FloatImage, gt: &FloatImage) -> Result<FloatImage> {
    pred.check_same_shape(gt)?;
    let (w, h) = (pred.width as usize, pred.height as usize);
    let mut out = FloatImage::new(pred.width, pred.height, pred.channels);
    for (c, (x, y)) in planes(pred).iter().zip(planes(gt).iter()).enumerate() {
        let s = stats(x, y, w, h);
        for i in 0..w * h {
            out.data[i * pred.channels + c] = ssim_value(&s, i);
        }
    }
    Ok(out)
}

#[inline]
fn ssim_value(s: &Stats, i: usize) -> f64 {
    let n1 = 2.0 * s.mu_x[i] * s.mu_y[i] + SSIM_C1;
    let n2 = 2.0 * s.cov[i] + SSIM_C2;
    let d1 = s.mu_x[i] * s.mu_x[i] + s.mu_y[i] * s.mu_y[i] + SSIM_C1;
    let d2 = s.var_x[i] + s.var_y[i] + SSIM_C2;
    n1 * n2 / (d1 * d2)
}

/// `1 - mean SSIM`.
pub fn loss_ssim(pred: &FloatImage, gt: &FloatImage) -> Result<f64> {
    Ok(1.0 - ssim_map(pred, gt)?.mean())
}

/// [`loss_ssim`] and its gradient with respect to `pred`.
pub fn loss_ssim_grad(pred: &FloatImage, gt: &FloatImage) -> Result<(f64, FloatImage)> {
    pred.check_same_shape(gt)?;
    let (w, h) = (pred.width as usize, pred.height as usize);
    let nc = pred.channels;
    let total = (w * h * nc) as f64;
    let mut grad = FloatImage::new(pred.width, pred.height, nc);
    let mut sum = 0.0;
    for (c, (x, y)) in planes(pred).iter().zip(planes(gt).iter()).enumerate() {
        let s = stats(x, y, w, h);
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        let mut cc = vec![0.0; w * h];
        for i in 0..w * h {
            let n1 = 2.0 * s.mu_x[i] * s.mu_y[i] + SSIM_C1;
            let n2 = 2.0 * s.cov[i] + SSIM_C2;
            let d1 = s.mu_x[i] * s.mu_x[i] + s.mu_y[i] * s.mu_y[i] + SSIM_C1;
            let d2 = s.var_x[i] + s.var_y[i] + SSIM_C2;
            let v = n1 * n2 / (d1 * d2);
            sum += v;
            let d_mu = 2.0 * s.mu_y[i] * n2 / (d1 * d2) - v * 2.0 * s.mu_x[i] / d1;
            let d_var = -v / d2;
            let d_cov = 2.0 * n1 / (d1 * d2);
            a[i] = d_mu - 2.0 * s.mu_x[i] * d_var - s.mu_y[i] * d_cov;
            b[i] = d_var;
            cc[i] = d_cov;
        }
        let ga = blur_plane(&a, w, h);
        let gb = blur_plane(&b, w, h);
        let gc = blur_plane(&cc, w, h);
        for i in 0..w * h {
            grad.data[i * nc + c] = -(ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i]) / total;
        }
    }
    Ok((1.0 - sum / total, grad))
}
