//! Binary little-endian PLY scene files.
//!
//! One vertex per Gaussian with the properties of [`property_names`], stored
//! as `double` (the reader also accepts `float`). Scene-level data travels in
//! a `comment rgs_meta <json>` header line.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{param, GaussianPoint, PARAM_COUNT};
use crate::scene::{Scene, ShDegrees};
use crate::sh::ShBlock;

const META_TAG: &str = "rgs_meta";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    sh_degrees: ShDegrees,
    env_sh: Vec<f64>,
}

/// Vertex property names in file order, each paired with its index in
/// [`GaussianPoint::write_params`] order.
pub fn property_names() -> Vec<(String, usize)> {
    let mut out = Vec::with_capacity(PARAM_COUNT);
    for (i, n) in ["x", "y", "z"].iter().enumerate() {
        out.push((n.to_string(), param::MEAN.start + i));
    }
    for i in 0..4 {
        out.push((format!("rot_{i}"), param::ROTATION.start + i));
    }
    for i in 0..3 {
        out.push((format!("scale_{i}"), param::SCALE.start + i));
    }
    out.push(("opacity".to_string(), param::OPACITY.start));
    for c in 0..3 {
        out.push((format!("f_dc_{c}"), param::COLOR_SH.start + c));
    }
    // Higher color coefficients are channel-major, as in common splat files.
    for c in 0..3 {
        for k in 1..16 {
            out.push((format!("f_rest_{}", c * 15 + k - 1), param::COLOR_SH.start + 3 * k + c));
        }
    }
    for i in 0..3 {
        out.push((format!("normal_{i}"), param::NORMAL.start + i));
    }
    for i in 0..3 {
        out.push((format!("base_color_{i}"), param::BASE_COLOR.start + i));
    }
    out.push(("roughness".to_string(), param::ROUGHNESS.start));
    out.push(("metallic".to_string(), param::METALLIC.start));
    for i in 0..16 {
        out.push((format!("vis_sh_{i}"), param::VISIBILITY_SH.start + i));
    }
    for i in 0..12 {
        out.push((format!("local_sh_{i}"), param::LOCAL_LIGHT_SH.start + i));
    }
    out
}

/// Serializes `scene` to PLY bytes.
pub fn encode_scene(scene: &Scene) -> Result<Vec<u8>> {
    scene.env_light.validate()?;
    let meta = Meta {
        sh_degrees: scene.sh_degrees,
        env_sh: scene.env_light.coeffs.clone(),
    };
    let props = property_names();
    let mut out = Vec::with_capacity(512 + scene.len() * PARAM_COUNT * 8);
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "comment {META_TAG} {}", serde_json::to_string(&meta).map_err(|e| Error::invalid(e.to_string()))?)?;
    writeln!(out, "element vertex {}", scene.len())?;
    for (name, _) in &props {
        writeln!(out, "property double {name}")?;
    }
    writeln!(out, "end_header")?;
    let mut params = [0.0; PARAM_COUNT];
    for p in &scene.points {
        p.write_params(&mut params);
        for (_, idx) in &props {
            out.extend_from_slice(&params[*idx].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_scene(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_scene(&bytes)
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    Float,
    Double,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::Float => 4,
            Scalar::Double => 8,
        }
    }
}

/// Parses PLY bytes produced by [`encode_scene`] or an equivalent writer.
pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(u64, String)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::parse(start as u64, "header ends without end_header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| Error::parse(start as u64, "header line is not UTF-8"))?;
        Ok((start as u64, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(Error::parse(off, "missing ply magic"));
    }
    let mut meta: Option<Meta> = None;
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut format_seen = false;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("binary_little_endian") {
                    return Err(Error::parse(off, "only binary_little_endian is supported"));
                }
                format_seen = true;
            }
            Some("comment") => {
                let rest = line["comment".len()..].trim_start();
                if let Some(json) = rest.strip_prefix(META_TAG) {
                    meta = Some(
                        serde_json::from_str(json.trim())
                            .map_err(|e| Error::parse(off, format!("bad {META_TAG} comment: {e}")))?,
                    );
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().unwrap_or("");
                if name != "vertex" || vertex_count.is_some() {
                    return Err(Error::parse(off, format!("unexpected element `{name}`")));
                }
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(off, "bad vertex count"))?;
                vertex_count = Some(count);
            }
            Some("property") => {
                if vertex_count.is_none() {
                    return Err(Error::parse(off, "property before element"));
                }
                let ty = match words.next() {
                    Some("double") | Some("float64") => Scalar::Double,
                    Some("float") | Some("float32") => Scalar::Float,
                    other => return Err(Error::parse(off, format!("unsupported property type {other:?}"))),
                };
                let name = words.next().ok_or_else(|| Error::parse(off, "property without a name"))?;
                props.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            _ => return Err(Error::parse(off, format!("unexpected header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(Error::parse(0, "missing format line"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(pos as u64, "missing vertex element"))?;
    let meta = meta.ok_or_else(|| Error::parse(pos as u64, format!("missing {META_TAG} comment")))?;

    let expected = property_names();
    if props.len() != expected.len() {
        return Err(Error::parse(
            pos as u64,
            format!("expected {} vertex properties, found {}", expected.len(), props.len()),
        ));
    }
    for ((got, _), (want, _)) in props.iter().zip(&expected) {
        if got != want {
            return Err(Error::parse(pos as u64, format!("property `{got}` where `{want}` was expected")));
        }
    }
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let needed = count
        .checked_mul(stride)
        .and_then(|n| n.checked_add(pos))
        .ok_or_else(|| Error::parse(pos as u64, "vertex count overflows"))?;
    if bytes.len() < needed {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("payload truncated: {} vertex bytes needed, {} present", needed - pos, bytes.len() - pos),
        ));
    }
    if bytes.len() > needed {
        return Err(Error::parse(needed as u64, "trailing bytes after the vertex payload"));
    }

    let mut points = Vec::with_capacity(count);
    let mut params = [0.0; PARAM_COUNT];
    let mut cursor = pos;
    for _ in 0..count {
        for ((_, ty), (_, idx)) in props.iter().zip(&expected) {
            params[*idx] = match ty {
                Scalar::Double => f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().expect("8 bytes")),
                Scalar::Float => f64::from(f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().expect("4 bytes"))),
            };
            cursor += ty.size();
        }
        let mut p = GaussianPoint::default();
        p.read_params(&params);
        points.push(p);
    }
    meta.sh_degrees
        .validate()
        .map_err(|e| Error::parse(0, format!("{META_TAG}: {e}")))?;
    let env = ShBlock::from_coeffs(meta.sh_degrees.env, 3, meta.env_sh)
        .map_err(|e| Error::parse(0, format!("{META_TAG}: {e}")))?;
    Ok(Scene {
        points,
        env_light: env,
        sh_degrees: meta.sh_degrees,
    })
}
