//! Real spherical harmonics up to degree 3.
//!
//! Basis functions are indexed `l * l + l + m` for `m` in `-l..=l` and carry
//! no Condon-Shortley phase, so every order-`m > 0` function is a positive
//! multiple of `cos(m phi)` and every `m < 0` function a positive multiple of
//! `sin(|m| phi)`. As polynomials in the direction `(x, y, z)`:
//!
//! | index | (l, m)  | function                      |
//! |-------|---------|-------------------------------|
//! | 0     | (0, 0)  | `C0`                          |
//! | 1     | (1, -1) | `C1 * y`                      |
//! | 2     | (1, 0)  | `C1 * z`                      |
//! | 3     | (1, 1)  | `C1 * x`                      |
//! | 4     | (2, -2) | `C2A * x * y`                 |
//! | 5     | (2, -1) | `C2A * y * z`                 |
//! | 6     | (2, 0)  | `C2B * (3z^2 - 1)`            |
//! | 7     | (2, 1)  | `C2A * x * z`                 |
//! | 8     | (2, 2)  | `C2C * (x^2 - y^2)`           |
//! | 9     | (3, -3) | `C3A * y * (3x^2 - y^2)`      |
//! | 10    | (3, -2) | `C3B * x * y * z`             |
//! | 11    | (3, -1) | `C3C * y * (5z^2 - 1)`        |
//! | 12    | (3, 0)  | `C3D * z * (5z^2 - 3)`        |
//! | 13    | (3, 1)  | `C3C * x * (5z^2 - 1)`        |
//! | 14    | (3, 2)  | `C3E * z * (x^2 - y^2)`       |
//! | 15    | (3, 3)  | `C3A * x * (x^2 - 3y^2)`      |
//!
//! The browser demo evaluates the same table, so the constants below are the
//! single source of truth.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: u32 = 3;
pub const MAX_SH_COEFFS: usize = 16;

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;
pub const C2A: f64 = 1.092_548_430_592_079_2;
pub const C2B: f64 = 0.315_391_565_252_520_05;
pub const C2C: f64 = 0.546_274_215_296_039_6;
pub const C3A: f64 = 0.590_043_589_926_643_5;
pub const C3B: f64 = 2.890_611_442_640_554;
pub const C3C: f64 = 0.457_045_799_464_465_8;
pub const C3D: f64 = 0.373_176_332_590_115_4;
pub const C3E: f64 = 1.445_305_721_320_277;

/// Number of coefficients per channel for `degree`.
pub const fn coeff_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Evaluates all basis functions up to `degree` at `d`. Entries past
/// `coeff_count(degree)` are left at zero.
pub fn basis(degree: u32, d: &Vector3<f64>) -> [f64; MAX_SH_COEFFS] {
    let mut out = [0.0; MAX_SH_COEFFS];
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = C0;
    if degree >= 1 {
        out[1] = C1 * y;
        out[2] = C1 * z;
        out[3] = C1 * x;
    }
    if degree >= 2 {
        out[4] = C2A * x * y;
        out[5] = C2A * y * z;
        out[6] = C2B * (3.0 * z * z - 1.0);
        out[7] = C2A * x * z;
        out[8] = C2C * (x * x - y * y);
    }
    if degree >= 3 {
        let z2 = z * z;
        out[9] = C3A * y * (3.0 * x * x - y * y);
        out[10] = C3B * x * y * z;
        out[11] = C3C * y * (5.0 * z2 - 1.0);
        out[12] = C3D * z * (5.0 * z2 - 3.0);
        out[13] = C3C * x * (5.0 * z2 - 1.0);
        out[14] = C3E * z * (x * x - y * y);
        out[15] = C3A * x * (x * x - 3.0 * y * y);
    }
    out
}

/// Gradient of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_grad(degree: u32, d: &Vector3<f64>) -> [[f64; 3]; MAX_SH_COEFFS] {
    let mut g = [[0.0; 3]; MAX_SH_COEFFS];
    let (x, y, z) = (d.x, d.y, d.z);
    if degree >= 1 {
        g[1] = [0.0, C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2A * y, C2A * x, 0.0];
        g[5] = [0.0, C2A * z, C2A * y];
        g[6] = [0.0, 0.0, C2B * 6.0 * z];
        g[7] = [C2A * z, 0.0, C2A * x];
        g[8] = [C2C * 2.0 * x, -C2C * 2.0 * y, 0.0];
    }
    if degree >= 3 {
        let z2 = z * z;
        g[9] = [C3A * 6.0 * x * y, C3A * (3.0 * x * x - 3.0 * y * y), 0.0];
        g[10] = [C3B * y * z, C3B * x * z, C3B * x * y];
        g[11] = [0.0, C3C * (5.0 * z2 - 1.0), C3C * 10.0 * y * z];
        g[12] = [0.0, 0.0, C3D * (15.0 * z2 - 3.0)];
        g[13] = [C3C * (5.0 * z2 - 1.0), 0.0, C3C * 10.0 * x * z];
        g[14] = [C3E * 2.0 * x * z, -C3E * 2.0 * y * z, C3E * (x * x - y * y)];
        g[15] = [C3A * (3.0 * x * x - 3.0 * y * y), -C3A * 6.0 * x * y, 0.0];
    }
    g
}

/// A block of SH coefficients, `channels` values per basis function.
///
/// Coefficients are stored basis-major: `coeffs[k * channels + c]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShBlock {
    pub degree: u32,
    pub channels: usize,
    pub coeffs: Vec<f64>,
}

impl ShBlock {
    pub fn zeros(degree: u32, channels: usize) -> Self {
        Self {
            degree,
            channels,
            coeffs: vec![0.0; coeff_count(degree) * channels],
        }
    }

    /// A block whose expansion is the constant `value` per channel.
    pub fn constant(degree: u32, value: &[f64]) -> Self {
        let mut block = Self::zeros(degree, value.len());
        for (c, v) in value.iter().enumerate() {
            block.coeffs[c] = v / C0;
        }
        block
    }

    pub fn from_coeffs(degree: u32, channels: usize, coeffs: Vec<f64>) -> Result<Self> {
        let block = Self {
            degree,
            channels,
            coeffs,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree > MAX_SH_DEGREE {
            return Err(Error::invalid(format!(
                "SH degree {} exceeds the supported maximum {MAX_SH_DEGREE}",
                self.degree
            )));
        }
        if self.channels == 0 {
            return Err(Error::invalid("SH block has zero channels"));
        }
        let expected = coeff_count(self.degree) * self.channels;
        if self.coeffs.len() != expected {
            return Err(Error::invalid(format!(
                "SH block of degree {} with {} channels needs {expected} coefficients, got {}",
                self.degree,
                self.channels,
                self.coeffs.len()
            )));
        }
        Ok(())
    }

    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.coeffs[k * self.channels + c]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }
}

/// Evaluates the expansion of `block` in direction `dir`, one value per channel.
pub fn evaluate_sh(block: &ShBlock, dir: &Vector3<f64>) -> Result<Vec<f64>> {
    block.validate()?;
    let y = basis(block.degree, dir);
    let n = coeff_count(block.degree);
    let mut out = vec![0.0; block.channels];
    for (k, yk) in y.iter().enumerate().take(n) {
        let row = &block.coeffs[k * block.channels..(k + 1) * block.channels];
        for (o, c) in out.iter_mut().zip(row) {
            *o += c * yk;
        }
    }
    Ok(out)
}

/// Per-band rotation matrices for `R`: band `l` maps `2l + 1` coefficients.
///
/// `matrices[l]` satisfies `Y_l(R^T d) . c == Y_l(d) . (M_l c)` for every
/// direction `d`.
pub fn band_rotations(rotation: &Matrix3<f64>, degree: u32) -> Vec<DMatrix<f64>> {
    let probes = probe_directions();
    let mut out = Vec::with_capacity(degree as usize + 1);
    out.push(DMatrix::identity(1, 1));
    for l in 1..=degree as usize {
        let width = 2 * l + 1;
        let offset = l * l;
        let mut a = DMatrix::zeros(probes.len(), width);
        let mut b = DMatrix::zeros(probes.len(), width);
        for (row, d) in probes.iter().enumerate() {
            let ya = basis(l as u32, d);
            let yb = basis(l as u32, &(rotation.transpose() * d));
            for m in 0..width {
                a[(row, m)] = ya[offset + m];
                b[(row, m)] = yb[offset + m];
            }
        }
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        let m = ata
            .cholesky()
            .expect("probe directions span every SH band")
            .solve(&atb);
        out.push(m);
    }
    out
}

fn probe_directions() -> Vec<Vector3<f64>> {
    const COUNT: usize = 40;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..COUNT)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / COUNT as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * k as f64 / golden;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Rotates coefficients laid out basis-major with `channels` values per basis.
pub fn rotate_coeffs(coeffs: &mut [f64], channels: usize, degree: u32, bands: &[DMatrix<f64>]) {
    for l in 1..=degree as usize {
        let width = 2 * l + 1;
        let offset = l * l;
        let m = &bands[l];
        for c in 0..channels {
            let src: Vec<f64> = (0..width)
                .map(|i| coeffs[(offset + i) * channels + c])
                .collect();
            for i in 0..width {
                let mut acc = 0.0;
                for (j, s) in src.iter().enumerate() {
                    acc += m[(i, j)] * s;
                }
                coeffs[(offset + i) * channels + c] = acc;
            }
        }
    }
}

/// Returns `block` rotated by `R`: `eval(rotate(B, R), d) == eval(B, R^T d)`.
pub fn rotate_sh(block: &ShBlock, rotation: &Matrix3<f64>) -> Result<ShBlock> {
    block.validate()?;
    let bands = band_rotations(rotation, block.degree);
    let mut out = block.clone();
    rotate_coeffs(&mut out.coeffs, block.channels, block.degree, &bands);
    Ok(out)
}
