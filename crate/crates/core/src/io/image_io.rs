//! 8-bit PNG and 32-bit float map encoding of [`FloatImage`]s.
//!
//! Float maps (`.fmap`) are `FMAP`, then little-endian `u32` width, height
//! and channel count, then one `f32` plane per channel, row-major.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::render::FloatImage;
use crate::shading::linear_to_srgb;

const FMAP_MAGIC: &[u8; 4] = b"FMAP";

/// Value transfer applied before 8-bit quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    Linear,
    Srgb,
}

fn quantize(v: f64, transfer: Transfer) -> u8 {
    let v = match transfer {
        Transfer::Linear => v,
        Transfer::Srgb => linear_to_srgb(v.max(0.0)),
    };
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// PNG bytes of a 1-, 3- or 4-channel image with values in `[0, 1]`.
pub fn encode_png(img: &FloatImage, transfer: Transfer) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v, transfer)).collect();
    let (w, h) = (img.width, img.height);
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("size")),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("size")),
        4 => DynamicImage::ImageRgba8(image::RgbaImage::from_raw(w, h, bytes).expect("size")),
        c => return Err(Error::invalid(format!("cannot write a {c}-channel image as PNG"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_png(img: &FloatImage, transfer: Transfer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(img, transfer)?).map_err(|e| Error::load(path, e.to_string()))
}

/// Decodes PNG bytes into values in `[0, 1]`: gray images give one
/// channel, everything else three (alpha dropped).
pub fn decode_png(bytes: &[u8]) -> Result<FloatImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::parse(0, e.to_string()))?;
    let (w, h) = (img.width(), img.height());
    let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16);
    if gray {
        let g = img.to_luma16();
        let data = g.as_raw().iter().map(|v| f64::from(*v) / 65535.0).collect();
        FloatImage::from_data(w, h, 1, data)
    } else if matches!(img.color(), image::ColorType::Rgb8 | image::ColorType::Rgba8) {
        let rgb = img.to_rgb8();
        let data = rgb.as_raw().iter().map(|v| f64::from(*v) / 255.0).collect();
        FloatImage::from_data(w, h, 3, data)
    } else {
        let rgb = img.to_rgb16();
        let data = rgb.as_raw().iter().map(|v| f64::from(*v) / 65535.0).collect();
        FloatImage::from_data(w, h, 3, data)
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<FloatImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_png(&bytes).map_err(|e| Error::load(path, e.to_string()))
}

pub fn encode_fmap(img: &FloatImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.data.len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&img.width.to_le_bytes());
    out.extend_from_slice(&img.height.to_le_bytes());
    out.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for c in 0..img.channels {
        for v in img.data.iter().skip(c).step_by(img.channels) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FloatImage> {
    if bytes.len() < 16 || &bytes[..4] != FMAP_MAGIC {
        return Err(Error::parse(0, "missing FMAP header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h, c) = (word(4), word(8), word(12) as usize);
    if c == 0 {
        return Err(Error::parse(12, "zero channels"));
    }
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::parse(4, "dimensions overflow"))?;
    let needed = 16 + n * 4;
    if bytes.len() != needed {
        return Err(Error::parse(
            bytes.len().min(needed) as u64,
            format!("payload has {} bytes, expected {}", bytes.len() - 16, n * 4),
        ));
    }
    let pixels = w as usize * h as usize;
    let mut data = vec![0.0; n];
    for ch in 0..c {
        for p in 0..pixels {
            let at = 16 + (ch * pixels + p) * 4;
            data[p * c + ch] = f64::from(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")));
        }
    }
    FloatImage::from_data(w, h, c, data)
}

pub fn save_fmap(img: &FloatImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fmap(img)).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_fmap(path: impl AsRef<Path>) -> Result<FloatImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_fmap(&bytes).map_err(|e| Error::load(path, e.to_string()))
}

/// Radiance HDR bytes as a linear RGB image.
pub fn decode_hdr(bytes: &[u8]) -> Result<FloatImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Hdr).map_err(|e| Error::parse(0, e.to_string()))?;
    let rgb = img.to_rgb32f();
    let data = rgb.as_raw().iter().map(|v| f64::from(*v)).collect();
    FloatImage::from_data(rgb.width(), rgb.height(), 3, data)
}

/// Radiance HDR encoding of a 3-channel linear image.
pub fn encode_hdr(img: &FloatImage) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::invalid("HDR output needs three channels"));
    }
    let pixels: Vec<image::Rgb<f32>> = img.data.chunks(3).map(|p| image::Rgb([p[0] as f32, p[1] as f32, p[2] as f32])).collect();
    let mut out = Vec::new();
    image::codecs::hdr::HdrEncoder::new(&mut out)
        .encode(&pixels, img.width as usize, img.height as usize)
        .map_err(|e| Error::invalid(format!("HDR encoding failed: {e}")))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32, c: usize) -> FloatImage {
        let n = w as usize * h as usize * c;
        FloatImage::from_data(w, h, c, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn png_round_trip_quantizes() {
        for c in [1, 3] {
            let img = ramp(7, 5, c);
            let back = decode_png(&encode_png(&img, Transfer::Linear).unwrap()).unwrap();
            assert_eq!(back.channels, c);
            for (a, b) in img.data.iter().zip(&back.data) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let img = ramp(9, 4, 3);
        assert_eq!(encode_png(&img, Transfer::Srgb).unwrap(), encode_png(&img, Transfer::Srgb).unwrap());
    }

    #[test]
    fn fmap_round_trip_is_exact_in_f32() {
        let img = ramp(6, 3, 2).map(|v| v * 1e3 - 7.0);
        let back = decode_fmap(&encode_fmap(&img)).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(*b, f64::from(*a as f32));
        }
        let bytes = encode_fmap(&img);
        assert!(decode_fmap(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_fmap(b"nope").is_err());
    }

    #[test]
    fn hdr_round_trip() {
        let img = ramp(8, 4, 3).map(|v| v * 4.0 + 0.1);
        let back = decode_hdr(&encode_hdr(&img).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 0.02 * a, "{a} {b}");
        }
        assert!(decode_hdr(b"#?RADIANCE\ngarbage").is_err());
    }
}
