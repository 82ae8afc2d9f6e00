//! Deterministic synthetic scenes for tests, benchmarks and demos.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::optim::{Supervision, TrainingSet};
use crate::render::{Channel, RenderRequest};
use crate::shading::{linear_to_srgb, ShadingConfig};
use crate::gaussian::{quat_norm, GaussianPoint};
use crate::scene::Scene;
use crate::sh::{ShBlock, C0, MAX_SH_COEFFS};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = quat_norm(&q);
        if n > 0.1 && n <= 1.0 {
            return q.map(|c| c / n);
        }
    }
}

/// Random rotation matrix.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    crate::gaussian::quat_to_matrix(&random_quat(rng))
}

/// Environment light with a dominant positive constant term.
pub fn random_env(rng: &mut impl Rng, degree: u32, dc: f64, spread: f64) -> ShBlock {
    let mut env = ShBlock::zeros(degree, 3);
    for c in 0..3 {
        env.coeffs[c] = dc / C0 * rng.gen_range(0.8..1.2);
    }
    for v in env.coeffs.iter_mut().skip(3) {
        *v = rng.gen_range(-spread..spread);
    }
    env
}

/// A point with every attribute drawn at random, with values kept away from
/// clamps: positive color and light expansions, visibility inside `(0, 1)`,
/// roughness well above its floor.
pub fn random_point(rng: &mut impl Rng, center: Vector3<f64>, spread: f64, scale: (f64, f64)) -> GaussianPoint {
    let mut p = GaussianPoint {
        mean: center + Vector3::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)),
        rotation: random_quat(rng),
        scale: Vector3::new(rng.gen_range(scale.0..scale.1), rng.gen_range(scale.0..scale.1), rng.gen_range(scale.0..scale.1)),
        ..Default::default()
    }
    .with_opacity(rng.gen_range(0.3..0.9));
    for k in 0..MAX_SH_COEFFS {
        for c in 0..3 {
            p.color_sh[k][c] = if k == 0 { rng.gen_range(0.3..0.8) / C0 } else { rng.gen_range(-0.05..0.05) };
        }
        p.visibility_sh[k] = if k == 0 { rng.gen_range(0.4..0.7) / C0 } else { rng.gen_range(-0.03..0.03) };
    }
    for k in 0..4 {
        for c in 0..3 {
            p.local_light_sh[k][c] = if k == 0 { rng.gen_range(0.1..0.3) / C0 } else { rng.gen_range(-0.02..0.02) };
        }
    }
    p.normal = random_unit(rng);
    p.base_color = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    p.roughness = rng.gen_range(0.2..0.8);
    p.metallic = rng.gen_range(0.1..0.9);
    p
}

/// Small scene in front of an identity camera, suited to gradient checks:
/// `n` points near depth 3 whose normals face the camera.
pub fn gradient_scene(seed: u64, n: usize, size: u32) -> (Scene, Camera) {
    let mut r = rng(seed);
    let focal = f64::from(size) * 1.2;
    let cam = Camera::new(
        Matrix3::identity(),
        Vector3::zeros(),
        (focal, focal, f64::from(size) / 2.0, f64::from(size) / 2.0),
        size,
        size,
    )
    .expect("valid camera");
    let points = (0..n)
        .map(|_| {
            let mut p = random_point(&mut r, Vector3::new(0.0, 0.0, 3.0), 0.8, (0.25, 0.5));
            let mut nrm = random_unit(&mut r);
            nrm.z = -(0.3 + 0.7 * nrm.z.abs());
            p.normal = nrm.normalize();
            p
        })
        .collect();
    let mut scene = Scene::new(points);
    scene.env_light = random_env(&mut r, 3, 1.0, 0.05);
    (scene, cam)
}

/// Camera on a sphere of radius `radius` around `target`, looking at it.
pub fn orbit_camera(target: Vector3<f64>, radius: f64, azimuth: f64, elevation: f64, fov_y: f64, width: u32, height: u32) -> Camera {
    let eye = target
        + Vector3::new(
            radius * elevation.cos() * azimuth.cos(),
            radius * elevation.cos() * azimuth.sin(),
            radius * elevation.sin(),
        );
    Camera::look_at(eye, target, Vector3::z(), fov_y, width, height).expect("valid orbit camera")
}

/// `count` points spread over a sphere surface of radius `radius`, oriented
/// outward, each a flattened disc.
pub fn sphere_shell(rng: &mut impl Rng, count: usize, center: Vector3<f64>, radius: f64, thickness: f64) -> Vec<GaussianPoint> {
    let lattice = crate::shading::sampling::sphere_lattice(count);
    let disc = radius * (4.0 * PI / count as f64).sqrt() * 0.8;
    lattice
        .iter()
        .map(|d| {
            let mut p = GaussianPoint {
                mean: center + d * radius,
                ..Default::default()
            };
            p.scale = Vector3::new(disc, disc, thickness);
            p.rotation = rotation_to(d);
            p.normal = *d;
            p.set_opacity(rng.gen_range(0.95..0.99));
            p
        })
        .collect()
}

/// Quaternion rotating `+z` onto unit `d`.
pub fn rotation_to(d: &Vector3<f64>) -> [f64; 4] {
    let z = Vector3::z();
    let c = z.dot(d);
    if c < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let axis = z.cross(d);
    let q = [1.0 + c, axis.x, axis.y, axis.z];
    let n = quat_norm(&q);
    q.map(|v| v / n)
}

/// Synthetic inverse-rendering problem with known materials.
#[derive(Debug, Clone)]
pub struct DeskFixture {
    /// Ground-truth scene with baked visibility.
    pub scene: Scene,
    pub data: TrainingSet,
    /// Shading used to render the ground-truth images.
    pub shading: ShadingConfig,
    pub background: [f64; 3],
}

/// Ground-truth material of a surface point with outward direction `d`.
fn desk_material(d: &Vector3<f64>) -> ([f64; 3], f64, f64) {
    if d.z > 0.35 {
        ([0.80, 0.35, 0.20], 0.45, 0.10)
    } else if d.z < -0.35 {
        ([0.20, 0.45, 0.75], 0.70, 0.0)
    } else {
        ([0.65, 0.60, 0.30], 0.30, 0.60)
    }
}

/// A unit sphere of `points` flattened Gaussians with three material bands
/// under a random degree-3 environment, seen by `train_views` orbit cameras
/// plus `holdout_views` cameras at interleaved azimuths, all `size` square.
pub fn desk_fixture(seed: u64, points: usize, train_views: usize, holdout_views: usize, size: u32) -> crate::Result<DeskFixture> {
    let mut r = rng(seed);
    let mut pts = sphere_shell(&mut r, points, Vector3::zeros(), 1.0, 0.02);
    for p in &mut pts {
        let (b, rough, metal) = desk_material(&p.normal);
        p.base_color = b;
        p.roughness = rough;
        p.metallic = metal;
        p.set_color(b);
    }
    let mut scene = Scene::new(pts);
    scene.env_light = random_env(&mut r, 3, 1.0, 0.15);
    let bvh = crate::bvh::build_lbvh(&scene)?;
    crate::bvh::bake_visibility_into(&mut scene, &bvh, crate::bvh::DEFAULT_BAKE_RAYS, crate::bvh::BAKE_K_OFFSET)?;
    let shading = ShadingConfig {
        enable_local_light: false,
        ..ShadingConfig::online()
    };
    let background = [0.0; 3];
    let fov = 40f64.to_radians();
    let view = |i: usize, n: usize, offset: f64| -> crate::Result<Supervision> {
        let az = 2.0 * PI * (i as f64 + offset) / n as f64;
        let el = if i % 2 == 0 { 0.35 } else { -0.25 } + 0.3 * offset;
        let cam = orbit_camera(Vector3::zeros(), 4.0, az, el, fov, size, size);
        let req = RenderRequest::new(cam.clone(), &[Channel::Pbr, Channel::Opacity])
            .with_shading(shading.clone())
            .with_background(background);
        let out = crate::render::rasterize_with_bvh(&scene, &req, Some(&bvh))?;
        let image = out.require(Channel::Pbr)?.map(|v| linear_to_srgb(v).clamp(0.0, 1.0));
        let mask = out.require(Channel::Opacity)?.map(|o| if o > 0.5 { 1.0 } else { 0.0 });
        Supervision::new(cam, image, Some(mask), None)
    };
    let train = (0..train_views).map(|i| view(i, train_views, 0.0)).collect::<crate::Result<Vec<_>>>()?;
    let holdout = (0..holdout_views).map(|i| view(i, holdout_views, 0.5)).collect::<crate::Result<Vec<_>>>()?;
    Ok(DeskFixture {
        scene,
        data: TrainingSet { train, holdout },
        shading,
        background,
    })
}

/// Mean absolute base-color error between two scenes, over the pixels the
/// reference covers (opacity above one half) in `cameras`.
pub fn base_color_mae(reference: &Scene, estimate: &Scene, cameras: &[Camera]) -> crate::Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for cam in cameras {
        let req = RenderRequest::new(cam.clone(), &[Channel::BaseColor, Channel::Opacity]);
        let a = crate::render::rasterize(reference, &req)?;
        let b = crate::render::rasterize(estimate, &req)?;
        let (ab, ao) = (a.require(Channel::BaseColor)?, a.require(Channel::Opacity)?);
        let (bb, bo) = (b.require(Channel::BaseColor)?, b.require(Channel::Opacity)?);
        for i in 0..ao.data.len() {
            if ao.data[i] > 0.5 {
                for c in 0..3 {
                    let expected = ab.data[3 * i + c] / ao.data[i];
                    let got = bb.data[3 * i + c] / bo.data[i].max(1e-6);
                    sum += (expected - got).abs();
                }
                count += 3;
            }
        }
    }
    if count == 0 {
        return Err(crate::Error::invalid("reference covers no pixel"));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::quat_to_matrix;

    #[test]
    fn rotation_to_maps_z_onto_target() {
        let mut r = rng(1);
        for _ in 0..100 {
            let d = random_unit(&mut r);
            let m = quat_to_matrix(&rotation_to(&d));
            assert!((m * Vector3::z() - d).norm() < 1e-9);
        }
        let m = quat_to_matrix(&rotation_to(&-Vector3::z()));
        assert!((m * Vector3::z() + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn gradient_scene_is_valid() {
        let (scene, cam) = gradient_scene(3, 10, 8);
        scene.validate().unwrap();
        for p in &scene.points {
            assert!(cam.to_camera(&p.mean).z > 1.0);
        }
    }
}
