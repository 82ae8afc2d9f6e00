use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;
use relight_core::fixtures::{orbit_camera, random_env, random_point, random_unit, rng};
use relight_core::render::{rasterize, Channel, RenderRequest};
use relight_core::shading::{shade_gaussian, ShadingConfig, VisibilityMode};
use relight_core::{Camera, GaussianPoint, Scene};

fn random_scene(seed: u64, max_points: usize) -> (Scene, Camera) {
    let mut r = rng(seed);
    let n = r.gen_range(1..=max_points);
    let points = (0..n).map(|_| random_point(&mut r, Vector3::zeros(), 0.8, (0.05, 0.3))).collect();
    let mut scene = Scene::new(points);
    scene.env_light = random_env(&mut r, 3, 1.0, 0.2);
    let cam = orbit_camera(Vector3::zeros(), 3.0, r.gen_range(0.0..6.3), r.gen_range(-1.0..1.0), 0.8, 24, 20);
    (scene, cam)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn opacity_and_transmittance_sum_to_one(seed in any::<u64>()) {
        let (scene, cam) = random_scene(seed, 30);
        let out = rasterize(&scene, &RenderRequest::new(cam, &[Channel::Opacity])).unwrap();
        for (o, t) in out.require(Channel::Opacity).unwrap().data.iter().zip(&out.final_transmittance) {
            prop_assert!((o + t - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn blending_is_linear_in_the_features(seed in any::<u64>(), a in 0.0..0.5f64, b in 0.0..0.5f64) {
        let (scene, cam) = random_scene(seed, 30);
        let mut r = rng(seed ^ 0x5eed);
        let g: Vec<f64> = scene.points.iter().map(|_| r.gen_range(0.0..1.0)).collect();
        let mut sg = scene.clone();
        let mut mix = scene.clone();
        for (i, gi) in g.iter().enumerate() {
            sg.points[i].roughness = *gi;
            mix.points[i].roughness = a * scene.points[i].roughness + b * gi;
        }
        let req = RenderRequest::new(cam, &[Channel::Roughness]);
        let render = |s: &Scene| rasterize(s, &req).unwrap().require(Channel::Roughness).unwrap().data.clone();
        let (rf, rg, rm) = (render(&scene), render(&sg), render(&mix));
        for i in 0..rm.len() {
            prop_assert!((rm[i] - (a * rf[i] + b * rg[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn uncovered_pixels_hold_the_background(bg in prop::array::uniform3(0.0..1.0f64)) {
        let p = GaussianPoint {
            scale: Vector3::repeat(0.05),
            ..Default::default()
        }
        .with_opacity(0.9);
        let scene = Scene::new(vec![p]);
        let cam = orbit_camera(Vector3::zeros(), 3.0, 0.0, 0.0, 0.8, 32, 32);
        let req = RenderRequest::new(cam, &[Channel::Color, Channel::Pbr]).with_background(bg);
        let out = rasterize(&scene, &req).unwrap();
        for ch in [Channel::Color, Channel::Pbr] {
            let img = out.require(ch).unwrap();
            for (x, y) in [(0, 0), (31, 0), (0, 31), (31, 31), (3, 17)] {
                prop_assert_eq!(img.pixel(x, y), &bg[..]);
            }
        }
    }

    #[test]
    fn shading_is_finite_and_non_negative(
        seed in any::<u64>(),
        samples in 1usize..64,
        specular in any::<bool>(),
        local in any::<bool>(),
        roughness in 0.0..1.0f64,
    ) {
        let mut r = rng(seed);
        let mut scene = Scene::new(Vec::new());
        scene.env_light = random_env(&mut r, 3, 1.0, 0.3);
        let mut p = random_point(&mut r, Vector3::zeros(), 0.5, (0.05, 0.2));
        p.roughness = roughness;
        let cfg = ShadingConfig {
            n_samples: samples,
            enable_specular: specular,
            enable_local_light: local,
            visibility_mode: VisibilityMode::BakedSh,
            ..ShadingConfig::online()
        };
        let c = shade_gaussian(&p, &random_unit(&mut r), &scene, &cfg, None).unwrap();
        prop_assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0), "{:?}", c);
    }
}

#[test]
fn every_channel_is_deterministic() {
    let (scene, cam) = random_scene(77, 40);
    let req = RenderRequest::new(cam, &Channel::ALL);
    let a = rasterize(&scene, &req).unwrap();
    let b = rasterize(&scene, &req).unwrap();
    for ch in Channel::ALL {
        let (x, y) = (&a.require(ch).unwrap().data, &b.require(ch).unwrap().data);
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()), "{ch}");
    }
}

#[test]
fn offline_mode_traces_visibility() {
    let (scene, cam) = random_scene(78, 40);
    let online = rasterize(&scene, &RenderRequest::new(cam.clone(), &[Channel::Visibility])).unwrap();
    let req = RenderRequest::new(cam, &[Channel::Visibility]).with_shading(ShadingConfig::offline());
    assert_eq!(req.shading.visibility_mode, VisibilityMode::Traced);
    let offline = rasterize(&scene, &req).unwrap();
    assert_ne!(online.require(Channel::Visibility).unwrap().data, offline.require(Channel::Visibility).unwrap().data);
}
