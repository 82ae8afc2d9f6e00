//! WebAssembly bindings for a static browser demo: an interactively relit
//! Gaussian scene, a BRDF lobe explorer and a white-furnace check.

use std::f64::consts::PI;

use nalgebra::Vector3;
use relight_core::bvh::{bake_visibility_into, build_lbvh, BAKE_K_OFFSET};
use relight_core::fixtures::{self, orbit_camera, sphere_shell};
use relight_core::gaussian::GaussianPoint;
use relight_core::render::{rasterize, Channel, RenderRequest};
use relight_core::shading::sampling::sphere_lattice;
use relight_core::shading::{
    diffuse_brdf, shade_gaussian, specular_brdf, Gamma, ShadingConfig, VisibilityMode, ONLINE_SAMPLES,
};
use relight_core::sh::{basis, coeff_count};
use relight_core::{Scene, ShBlock};
use wasm_bindgen::prelude::*;

/// Directions used to project the sun-and-sky light onto SH.
const PROJECTION_DIRECTIONS: usize = 2048;
/// Angular sharpness of the sun lobe.
const SUN_SHARPNESS: f64 = 6.0;
/// Rays per point when the demo scene bakes its visibility.
const DEMO_BAKE_RAYS: usize = 64;

fn direction(azimuth_deg: f64, elevation_deg: f64) -> Vector3<f64> {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
}

/// Degree-3 SH of a uniform `ambient` sky plus a smooth sun lobe
/// `intensity * exp(k (d . s - 1))` centered on `sun`.
pub fn sun_and_sky(sun: &Vector3<f64>, intensity: f64, ambient: f64) -> ShBlock {
    let degree = 3;
    let n = coeff_count(degree);
    let mut env = ShBlock::constant(degree, &[ambient; 3]);
    let weight = 4.0 * PI / PROJECTION_DIRECTIONS as f64;
    for d in sphere_lattice(PROJECTION_DIRECTIONS) {
        let radiance = intensity * (SUN_SHARPNESS * (d.dot(sun) - 1.0)).exp() * weight;
        let y = basis(degree, &d);
        for k in 0..n {
            for c in 0..3 {
                env.coeffs[k * 3 + c] += radiance * y[k];
            }
        }
    }
    env
}

/// A banded sphere resting on a floor, with baked visibility.
pub fn demo_scene() -> Scene {
    let mut r = fixtures::rng(1);
    let mut points = sphere_shell(&mut r, 500, Vector3::new(0.0, 0.0, 0.55), 0.5, 0.02);
    for p in &mut points {
        let band = ((p.normal.z + 1.0) * 1.5) as usize;
        let (rgb, rough, metal) = match band {
            0 => ([0.8, 0.3, 0.2], 0.7, 0.0),
            1 => ([0.9, 0.8, 0.3], 0.25, 0.9),
            _ => ([0.2, 0.4, 0.8], 0.4, 0.1),
        };
        p.base_color = rgb;
        p.roughness = rough;
        p.metallic = metal;
        p.set_color(rgb);
    }
    let cells = 18;
    let spacing = 2.4 / cells as f64;
    for i in 0..cells {
        for j in 0..cells {
            let mean = Vector3::new(
                -1.2 + spacing * (i as f64 + 0.5),
                -1.2 + spacing * (j as f64 + 0.5),
                0.0,
            );
            let mut p = GaussianPoint {
                mean,
                scale: Vector3::new(spacing * 0.7, spacing * 0.7, 0.01),
                normal: Vector3::z(),
                base_color: [0.7, 0.7, 0.7],
                roughness: 0.8,
                metallic: 0.0,
                ..Default::default()
            };
            p.set_opacity(0.97);
            p.set_color([0.7; 3]);
            points.push(p);
        }
    }
    let mut scene = Scene::new(points);
    scene.sh_degrees.local_light = 0;
    let bvh = build_lbvh(&scene).expect("demo scene is valid");
    bake_visibility_into(&mut scene, &bvh, DEMO_BAKE_RAYS, BAKE_K_OFFSET).expect("demo bake");
    scene
}

/// Interactive relighting of [`demo_scene`].
#[wasm_bindgen]
pub struct RelightDemo {
    scene: Scene,
    size: u32,
    view: (f64, f64),
    samples: usize,
}

#[wasm_bindgen]
impl RelightDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32) -> RelightDemo {
        let mut demo = RelightDemo {
            scene: demo_scene(),
            size: size.clamp(16, 512),
            view: (-60.0, 25.0),
            samples: ONLINE_SAMPLES,
        };
        demo.set_light(30.0, 50.0, 3.0, 0.3);
        demo
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn point_count(&self) -> usize {
        self.scene.len()
    }

    /// Sun direction in degrees, sun intensity and uniform sky radiance.
    pub fn set_light(&mut self, azimuth_deg: f64, elevation_deg: f64, intensity: f64, ambient: f64) {
        let sun = direction(azimuth_deg, elevation_deg);
        self.scene.env_light = sun_and_sky(&sun, intensity.max(0.0), ambient.max(0.0));
    }

    pub fn set_view(&mut self, azimuth_deg: f64, elevation_deg: f64) {
        self.view = (azimuth_deg, elevation_deg.clamp(-10.0, 85.0));
    }

    pub fn set_samples(&mut self, samples: usize) {
        self.samples = samples.clamp(1, 1024);
    }

    /// Environment light coefficients, basis-major RGB.
    pub fn env_sh(&self) -> Vec<f64> {
        self.scene.env_light.coeffs.clone()
    }

    /// Shaded image as sRGB RGBA bytes, row-major.
    pub fn render_rgba(&self) -> Vec<u8> {
        let cam = orbit_camera(
            Vector3::new(0.0, 0.0, 0.3),
            3.2,
            self.view.0.to_radians(),
            self.view.1.to_radians(),
            0.75,
            self.size,
            self.size,
        );
        let shading = ShadingConfig {
            n_samples: self.samples,
            enable_local_light: false,
            ..ShadingConfig::online()
        };
        let req = RenderRequest::new(cam, &[Channel::Pbr])
            .with_shading(shading)
            .with_background([0.05, 0.06, 0.08]);
        let buffers = rasterize(&self.scene, &req).expect("demo render");
        let img = buffers.require(Channel::Pbr).expect("pbr channel");
        let mut out = Vec::with_capacity(img.data.len() / 3 * 4);
        for px in img.data.chunks(3) {
            for v in px {
                let s = relight_core::shading::linear_to_srgb(v.max(0.0));
                out.push((s.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
        out
    }
}

/// Cosine-weighted BRDF `f(o, i) (n . i)` in the plane of incidence, for an
/// outgoing direction at `view_deg` from the normal and `steps` incident
/// angles from -90 to 90 degrees. Returns luminance-averaged values.
#[wasm_bindgen]
pub fn brdf_lobe(roughness: f64, metallic: f64, view_deg: f64, steps: usize) -> Vec<f64> {
    let n = Vector3::z();
    let o = Vector3::new(view_deg.to_radians().sin(), 0.0, view_deg.to_radians().cos());
    let base = [0.9, 0.9, 0.9];
    let steps = steps.max(2);
    (0..steps)
        .map(|k| {
            let theta = -PI / 2.0 + PI * k as f64 / (steps - 1) as f64;
            let i = Vector3::new(theta.sin(), 0.0, theta.cos());
            let cos = i.dot(&n).max(0.0);
            let spec = specular_brdf(&o, &i, &n, base, roughness, metallic);
            let diff = diffuse_brdf(base, metallic);
            (0..3).map(|c| (spec[c] + diff[c]) * cos).sum::<f64>() / 3.0
        })
        .collect()
}

/// Largest relative deviation from the base color when a diffuse point is
/// shaded under a unit uniform environment with `samples` light samples,
/// over `normals` lattice normals.
#[wasm_bindgen]
pub fn furnace_error(samples: usize, normals: usize) -> f64 {
    let mut scene = Scene::new(Vec::new());
    scene.env_light = ShBlock::constant(3, &[1.0; 3]);
    let cfg = ShadingConfig {
        n_samples: samples.max(1),
        enable_specular: false,
        enable_local_light: false,
        visibility_mode: VisibilityMode::None,
        gamma: Gamma::Linear,
    };
    let base = [0.8, 0.5, 0.2];
    let mut worst: f64 = 0.0;
    for normal in sphere_lattice(normals.max(1)) {
        let p = GaussianPoint {
            normal,
            base_color: base,
            metallic: 0.0,
            ..Default::default()
        };
        let c = shade_gaussian(&p, &normal, &scene, &cfg, None).expect("furnace shading");
        for (got, want) in c.iter().zip(base) {
            worst = worst.max((got - want).abs() / want);
        }
    }
    worst
}
