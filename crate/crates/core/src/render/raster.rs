use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2, Vector3};

use super::normals::{world_normals_from_depth, PSEUDO_NORMAL_MIN_OPACITY};
use super::{Channel, FloatImage, RenderBuffers, RenderRequest, ALPHA_MAX};
use crate::bvh::{build_lbvh, Bvh};
use crate::camera::{project_covariance_2d, Camera, Z_NEAR};
use crate::error::Result;
use crate::par;
use crate::scene::Scene;
use crate::sh::{basis, coeff_count};
use crate::shading::{ShadeOutput, Shader, VisibilityMode};

/// Side length of the square screen tiles, in pixels.
pub const TILE_SIZE: u32 = 16;

/// Indices of points in front of the near plane, stably sorted by camera depth.
pub fn sort_by_depth(scene: &Scene, camera: &Camera) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = scene
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let z = camera.to_camera(&p.mean).z;
            (z > Z_NEAR).then_some((z, i))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// A Gaussian projected into one view.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    /// Camera-space mean.
    pub t: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    /// Tile rectangle `[x0, y0, x1, y1)`.
    pub rect: [u32; 4],
}

impl Splat {
    /// Unclamped opacity at the pixel center `p`, with the offset from the mean.
    #[inline]
    pub fn alpha_at(&self, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let d = p - self.mean2d;
        let q = d.x * d.x * self.conic[(0, 0)] + 2.0 * d.x * d.y * self.conic[(0, 1)] + d.y * d.y * self.conic[(1, 1)];
        (self.opacity * (-0.5 * q).exp(), d)
    }
}

/// Offsets of each splatted channel inside the per-splat feature vector.
#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    offsets: BTreeMap<Channel, usize>,
    pub width: usize,
}

impl Layout {
    fn new(request: &RenderRequest) -> Self {
        let mut wanted: Vec<Channel> = request.channels.clone();
        if request.wants(Channel::PseudoNormal) {
            wanted.push(Channel::Depth);
            wanted.push(Channel::Opacity);
        }
        let mut layout = Layout::default();
        for ch in Channel::ALL {
            if ch != Channel::PseudoNormal && wanted.contains(&ch) {
                layout.offsets.insert(ch, layout.width);
                layout.width += ch.components();
            }
        }
        layout
    }

    pub fn offset(&self, ch: Channel) -> Option<usize> {
        self.offsets.get(&ch).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Channel, usize)> + '_ {
        self.offsets.iter().map(|(c, o)| (*c, *o))
    }
}

/// A rendered view together with the intermediates its reverse pass needs.
pub struct Frame {
    pub buffers: RenderBuffers,
    pub(crate) request: RenderRequest,
    pub(crate) splats: Vec<Splat>,
    pub(crate) layout: Layout,
    pub(crate) features: Vec<f64>,
    pub(crate) color_raw: Vec<[f64; 3]>,
    pub(crate) shaded: Vec<ShadeOutput>,
    /// Per tile, the range of `tile_list` it covers.
    pub(crate) tile_ranges: Vec<(usize, usize)>,
    /// Splat indices per tile, front to back.
    pub(crate) tile_list: Vec<u32>,
    /// Per pixel, how many entries of its tile list were visited.
    pub(crate) last: Vec<u32>,
    pub(crate) tiles_x: u32,
}

impl Frame {
    /// Renders `request`; `bvh` is used for traced visibility.
    pub fn render(scene: &Scene, request: &RenderRequest, bvh: Option<&Bvh>) -> Result<Frame> {
        request.validate()?;
        let cam = &request.camera;
        let layout = Layout::new(request);
        let needs_shading = layout.offset(Channel::Pbr).is_some() || layout.offset(Channel::Visibility).is_some();
        let shader = if needs_shading {
            Some(Shader::new(scene, &request.shading, bvh)?)
        } else {
            None
        };

        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let order = sort_by_depth(scene, cam);
        let splats: Vec<Splat> = par::map_slice(&order, |&i| project(scene, cam, i, request.alpha_min, tiles_x, tiles_y))
            .into_iter()
            .flatten()
            .collect();

        let center = cam.center();
        let color_degree = scene.sh_degrees.color;
        let per_splat = par::map_slice(&splats, |s| {
            let p = &scene.points[s.index];
            let mut color = [0.0; 3];
            if layout.offset(Channel::Color).is_some() {
                let dir = (p.mean - center).normalize();
                let y = basis(color_degree, &dir);
                for k in 0..coeff_count(color_degree) {
                    for (c, col) in color.iter_mut().enumerate() {
                        *col += p.color_sh[k][c] * y[k];
                    }
                }
            }
            let shade = match &shader {
                Some(sh) => sh.shade(p, Some(s.index), &(center - p.mean).normalize()),
                None => ShadeOutput::default(),
            };
            let mut f = vec![0.0; layout.width];
            for (ch, o) in layout.entries() {
                match ch {
                    Channel::Color => {
                        for c in 0..3 {
                            f[o + c] = color[c].max(0.0);
                        }
                    }
                    Channel::Pbr => f[o..o + 3].copy_from_slice(&shade.color),
                    Channel::Depth => f[o] = s.t.z,
                    Channel::Normal => f[o..o + 3].copy_from_slice(p.unit_normal().as_slice()),
                    Channel::BaseColor => f[o..o + 3].copy_from_slice(&p.base_color),
                    Channel::Roughness => f[o] = p.roughness,
                    Channel::Metallic => f[o] = p.metallic,
                    Channel::Opacity => f[o] = 1.0,
                    Channel::Visibility => f[o] = shade.ambient_occlusion,
                    Channel::PseudoNormal => {}
                }
            }
            (color, shade, f)
        });
        let mut color_raw = Vec::with_capacity(splats.len());
        let mut shaded = Vec::with_capacity(splats.len());
        let mut features = Vec::with_capacity(splats.len() * layout.width);
        for (c, s, f) in per_splat {
            color_raw.push(c);
            shaded.push(s);
            features.extend_from_slice(&f);
        }

        // Per-tile lists in front-to-back order.
        let n_tiles = (tiles_x * tiles_y) as usize;
        let mut counts = vec![0usize; n_tiles];
        for s in &splats {
            for ty in s.rect[1]..s.rect[3] {
                for tx in s.rect[0]..s.rect[2] {
                    counts[(ty * tiles_x + tx) as usize] += 1;
                }
            }
        }
        let mut tile_ranges = Vec::with_capacity(n_tiles);
        let mut start = 0;
        for c in &counts {
            tile_ranges.push((start, start + c));
            start += c;
        }
        let mut cursor: Vec<usize> = tile_ranges.iter().map(|r| r.0).collect();
        let mut tile_list = vec![0u32; start];
        for (si, s) in splats.iter().enumerate() {
            for ty in s.rect[1]..s.rect[3] {
                for tx in s.rect[0]..s.rect[2] {
                    let t = (ty * tiles_x + tx) as usize;
                    tile_list[cursor[t]] = si as u32;
                    cursor[t] += 1;
                }
            }
        }

        let mut frame = Frame {
            buffers: RenderBuffers {
                width: cam.width,
                height: cam.height,
                maps: BTreeMap::new(),
                final_transmittance: Vec::new(),
            },
            request: request.clone(),
            splats,
            layout,
            features,
            color_raw,
            shaded,
            tile_ranges,
            tile_list,
            last: Vec::new(),
            tiles_x,
        };
        frame.blend();
        Ok(frame)
    }

    fn blend(&mut self) {
        let cam = &self.request.camera;
        let (w, h) = (cam.width, cam.height);
        let fw = self.layout.width;
        let n_tiles = self.tile_ranges.len();
        let tile_out = par::map_range(n_tiles, |t| self.blend_tile(t));

        let mut accum = vec![0.0; w as usize * h as usize * fw];
        let mut final_t = vec![1.0; w as usize * h as usize];
        let mut last = vec![0u32; w as usize * h as usize];
        for (t, out) in tile_out.into_iter().enumerate() {
            let (x0, y0, x1, y1) = self.tile_pixels(t);
            let mut k = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let pix = (y * w + x) as usize;
                    accum[pix * fw..(pix + 1) * fw].copy_from_slice(&out.0[k * fw..(k + 1) * fw]);
                    final_t[pix] = out.1[k];
                    last[pix] = out.2[k];
                    k += 1;
                }
            }
        }

        let bg = self.request.background;
        let mut maps = BTreeMap::new();
        for (ch, o) in self.layout.entries() {
            let nc = ch.components();
            let mut img = FloatImage::new(w, h, nc);
            for pix in 0..(w * h) as usize {
                for c in 0..nc {
                    let mut v = accum[pix * fw + o + c];
                    if ch.uses_background() {
                        v += final_t[pix] * bg[c];
                    }
                    img.data[pix * nc + c] = v;
                }
            }
            maps.insert(ch, img);
        }
        if self.request.wants(Channel::PseudoNormal) {
            let depth = &maps[&Channel::Depth];
            let opacity = &maps[&Channel::Opacity];
            let expected = FloatImage {
                data: depth
                    .data
                    .iter()
                    .zip(&opacity.data)
                    .map(|(d, o)| if *o >= PSEUDO_NORMAL_MIN_OPACITY { d / o } else { f64::NAN })
                    .collect(),
                ..depth.clone()
            };
            maps.insert(Channel::PseudoNormal, world_normals_from_depth(&expected, cam));
        }
        maps.retain(|ch, _| self.request.wants(*ch));
        self.buffers.maps = maps;
        self.buffers.final_transmittance = final_t;
        self.last = last;
    }

    /// Pixel rectangle `[x0, x1) x [y0, y1)` of tile `t`.
    pub(crate) fn tile_pixels(&self, t: usize) -> (u32, u32, u32, u32) {
        let cam = &self.request.camera;
        let tx = t as u32 % self.tiles_x;
        let ty = t as u32 / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(cam.width), (y0 + TILE_SIZE).min(cam.height))
    }

    fn blend_tile(&self, t: usize) -> (Vec<f64>, Vec<f64>, Vec<u32>) {
        let (x0, y0, x1, y1) = self.tile_pixels(t);
        let (start, end) = self.tile_ranges[t];
        let list = &self.tile_list[start..end];
        let fw = self.layout.width;
        let n_pix = ((x1 - x0) * (y1 - y0)) as usize;
        let mut accum = vec![0.0; n_pix * fw];
        let mut final_t = vec![1.0; n_pix];
        let mut last = vec![0u32; n_pix];
        let alpha_min = self.request.alpha_min;
        let t_stop = self.request.t_stop;
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let acc = &mut accum[k * fw..(k + 1) * fw];
                let mut tr = 1.0;
                let mut visited = 0;
                for (j, &si) in list.iter().enumerate() {
                    visited = j as u32 + 1;
                    let s = &self.splats[si as usize];
                    let (a, _) = s.alpha_at(&p);
                    if a < alpha_min {
                        continue;
                    }
                    let alpha = a.min(ALPHA_MAX);
                    let wgt = tr * alpha;
                    let f = &self.features[si as usize * fw..(si as usize + 1) * fw];
                    for (o, v) in acc.iter_mut().zip(f) {
                        *o += wgt * v;
                    }
                    tr *= 1.0 - alpha;
                    if tr < t_stop {
                        break;
                    }
                }
                final_t[k] = tr;
                last[k] = visited;
                k += 1;
            }
        }
        (accum, final_t, last)
    }

    /// Number of splats that survived culling.
    pub fn splat_count(&self) -> usize {
        self.splats.len()
    }

    /// Point indices of the splats, front to back.
    pub fn visible_points(&self) -> Vec<usize> {
        self.splats.iter().map(|s| s.index).collect()
    }

    /// Number of incident-light samples behind the PBR channel.
    pub fn light_sample_count(&self) -> usize {
        if self.layout.offset(Channel::Pbr).is_some() {
            self.splats.len() * self.request.shading.n_samples
        } else {
            0
        }
    }

    /// Mean over all incident-light samples of `sum_c |L_c - mean(L)|`.
    pub fn light_regularizer(&self) -> f64 {
        let n = self.light_sample_count();
        if n == 0 {
            return 0.0;
        }
        self.shaded.iter().map(|s| s.light_deviation).sum::<f64>() / n as f64
    }

    pub fn request(&self) -> &RenderRequest {
        &self.request
    }
}

fn project(scene: &Scene, cam: &Camera, index: usize, alpha_min: f64, tiles_x: u32, tiles_y: u32) -> Option<Splat> {
    let p = &scene.points[index];
    let opacity = p.opacity();
    if !(opacity >= alpha_min) {
        return None;
    }
    let cov2d = project_covariance_2d(&p.covariance(), cam, &p.mean)?;
    let conic = cov2d.try_inverse()?;
    let t = cam.to_camera(&p.mean);
    let mean2d = cam.project_camera_point(&t);
    // Beyond this Mahalanobis radius alpha falls below alpha_min.
    let r = (2.0 * (opacity / alpha_min).ln()).max(0.0).sqrt();
    let hx = r * cov2d[(0, 0)].sqrt();
    let hy = r * cov2d[(1, 1)].sqrt();
    // Pixels whose centers (i + 0.5) fall inside the box.
    let px0 = (mean2d.x - hx - 0.5).ceil().max(0.0);
    let py0 = (mean2d.y - hy - 0.5).ceil().max(0.0);
    let px1 = (mean2d.x + hx - 0.5).floor().min(f64::from(cam.width) - 1.0);
    let py1 = (mean2d.y + hy - 0.5).floor().min(f64::from(cam.height) - 1.0);
    if !(px0 <= px1 && py0 <= py1) {
        return None;
    }
    let rect = [
        (px0 as u32 / TILE_SIZE).min(tiles_x),
        (py0 as u32 / TILE_SIZE).min(tiles_y),
        (px1 as u32 / TILE_SIZE + 1).min(tiles_x),
        (py1 as u32 / TILE_SIZE + 1).min(tiles_y),
    ];
    Some(Splat {
        index,
        t,
        mean2d,
        conic,
        opacity,
        rect,
    })
}

/// Renders every requested channel; builds a BVH when traced visibility needs one.
pub fn rasterize(scene: &Scene, request: &RenderRequest) -> Result<RenderBuffers> {
    let needs_bvh = request.shading.visibility_mode == VisibilityMode::Traced
        && (request.wants(Channel::Pbr) || request.wants(Channel::Visibility))
        && !scene.is_empty();
    let bvh = if needs_bvh { Some(build_lbvh(scene)?) } else { None };
    rasterize_with_bvh(scene, request, bvh.as_ref())
}

/// [`rasterize`] with a caller-provided BVH.
pub fn rasterize_with_bvh(scene: &Scene, request: &RenderRequest, bvh: Option<&Bvh>) -> Result<RenderBuffers> {
    Ok(Frame::render(scene, request, bvh)?.buffers)
}
