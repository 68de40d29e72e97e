//! Forward-rasterizer correctness against independent oracles.

mod common;

use coinsplat::camera::{Camera, Intrinsics, RigidTransform};
use coinsplat::image::Image;
use coinsplat::quat;
use coinsplat::render::{render, render_backward, render_naive, project_gaussian};
use coinsplat::scene::{sigmoid, Gaussian3D};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn test_camera(size: usize) -> Camera {
    Camera::new(
        Intrinsics {
            fx: 1.5 * size as f64,
            fy: 1.5 * size as f64,
            cx: (size as f64 - 1.0) / 2.0,
            cy: (size as f64 - 1.0) / 2.0,
            width: size,
            height: size,
        },
        RigidTransform::identity(),
    )
    .unwrap()
}

#[test]
fn empty_scene_renders_background() {
    let cam = test_camera(32);
    let bg = Vector3::new(0.2, 0.4, 0.6);
    let out = render(&[], &cam, bg).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(out.color.get(x, y), [0.2, 0.4, 0.6]);
            assert_eq!(out.alpha.get(x, y), 0.0);
            assert_eq!(out.depth.get(x, y), 0.0);
        }
    }
}

#[test]
fn opaque_gaussian_paints_its_color_at_center() {
    let cam = test_camera(33); // odd size: cx = 16 is a pixel center
    let g = Gaussian3D {
        position: Vector3::new(0.0, 0.0, 2.0),
        rotation: quat::IDENTITY,
        log_scale: Vector3::from_element(0.1_f64.ln()),
        logit_opacity: 12.0, // opacity ~ 0.999994
        color: Vector3::new(0.8, 0.3, 0.1),
    };
    let out = render(&[g], &cam, Vector3::zeros()).unwrap();
    let center = out.color.get(16, 16);
    for (got, want) in center.iter().zip([0.8, 0.3, 0.1]) {
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }
}

#[test]
fn near_plane_gaussian_is_culled() {
    let cam = test_camera(32);
    let g = Gaussian3D {
        position: Vector3::new(0.0, 0.0, 0.005),
        rotation: quat::IDENTITY,
        log_scale: Vector3::from_element(0.1_f64.ln()),
        logit_opacity: 0.0,
        color: Vector3::new(1.0, 0.0, 0.0),
    };
    assert!(project_gaussian(&g, &cam).is_none());
    let out = render(&[g], &cam, Vector3::zeros()).unwrap();
    assert_eq!(out.stats.culled_count, 1);
}

/// Direct high-precision summation oracle for a 3-Gaussian scene, written
/// from the projection formulas with raw matrix arithmetic (no renderer
/// code). Compositing follows the same front-to-back equation.
#[test]
fn three_overlapping_gaussians_match_direct_summation() {
    let size = 24;
    let cam = test_camera(size);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gaussians: Vec<Gaussian3D> = (0..3)
        .map(|i| Gaussian3D {
            position: Vector3::new(
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                1.5 + 0.3 * i as f64,
            ),
            rotation: quat::normalize(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]),
            log_scale: Vector3::new(
                rng.random_range(-3.0..-2.0),
                rng.random_range(-3.0..-2.0),
                rng.random_range(-3.0..-2.0),
            ),
            logit_opacity: rng.random_range(-0.5..1.5),
            color: Vector3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect();
    let bg = Vector3::new(0.1, 0.1, 0.2);
    let out = render(&gaussians, &cam, bg).unwrap();

    // Oracle: project means and covariances by explicit matrices.
    struct Flat {
        mean: Vector2<f64>,
        inv: Matrix2<f64>,
        opacity: f64,
        color: Vector3<f64>,
        depth: f64,
    }
    let mut flats: Vec<Flat> = gaussians
        .iter()
        .map(|g| {
            let p = g.position; // identity pose
            let mean = Vector2::new(
                cam.fx() * p.x / p.z + cam.cx(),
                cam.fy() * p.y / p.z + cam.cy(),
            );
            let j = nalgebra::Matrix2x3::new(
                cam.fx() / p.z,
                0.0,
                -cam.fx() * p.x / (p.z * p.z),
                0.0,
                cam.fy() / p.z,
                -cam.fy() * p.y / (p.z * p.z),
            );
            let q = quat::normalize(&g.rotation);
            let r = quat::to_matrix(&q);
            let s2 = Matrix3::from_diagonal(&g.log_scale.map(|v| (2.0 * v).exp()));
            let sigma = r * s2 * r.transpose();
            let mut cov = j * sigma * j.transpose();
            cov[(0, 0)] += 0.3;
            cov[(1, 1)] += 0.3;
            Flat {
                mean,
                inv: cov.try_inverse().unwrap(),
                opacity: sigmoid(g.logit_opacity),
                color: g.color,
                depth: p.z,
            }
        })
        .collect();
    flats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());

    let mut max_diff: f64 = 0.0;
    for y in 0..size {
        for x in 0..size {
            let pixel = Vector2::new(x as f64, y as f64);
            let mut trans = 1.0;
            let mut acc = Vector3::zeros();
            for f in &flats {
                if trans < 1e-4 {
                    break;
                }
                let d = pixel - f.mean;
                let rho = (d.transpose() * f.inv * d)[(0, 0)];
                let a = f.opacity * (-0.5 * rho).exp();
                acc += f.color * (a * trans);
                trans *= 1.0 - a;
            }
            acc += bg * trans;
            let got = out.color.get(x, y);
            for ch in 0..3 {
                max_diff = max_diff.max((got[ch] - acc[ch]).abs());
            }
        }
    }
    assert!(max_diff <= 1e-5, "max diff vs direct summation: {max_diff:.3e}");
}

#[test]
fn tile_path_matches_naive_oracle_on_random_scenes() {
    for seed in 0..8u64 {
        let cam = test_camera(48);
        let scene = common::random_scene(seed, 30, &cam);
        let bg = Vector3::new(0.05, 0.1, 0.15);
        let fast = render(&scene, &cam, bg).unwrap();
        let slow = render_naive(&scene, &cam, bg).unwrap();
        let diff = fast.color.max_abs_diff(&slow.color);
        assert!(diff <= 1e-5, "seed {seed}: tile vs naive diff {diff:.3e}");
        let ddiff = fast.depth.max_abs_diff(&slow.depth);
        assert!(ddiff <= 1e-5, "seed {seed}: depth diff {ddiff:.3e}");
        let adiff = fast.alpha.max_abs_diff(&slow.alpha);
        assert!(adiff <= 1e-6, "seed {seed}: alpha diff {adiff:.3e}");
    }
}

#[test]
fn compositing_conserves_alpha_plus_transmittance() {
    for seed in 100..110u64 {
        let cam = test_camera(32);
        let scene = common::random_scene(seed, 25, &cam);
        let out = render(&scene, &cam, Vector3::zeros()).unwrap();
        for (a, t) in out.alpha.data.iter().zip(&out.transmittance.data) {
            assert!((a + t - 1.0).abs() <= 1e-6, "alpha {a} + T {t} != 1");
        }
    }
}

#[test]
fn storage_order_permutation_leaves_image_unchanged() {
    let cam = test_camera(32);
    let scene = common::random_scene(42, 40, &cam);
    let bg = Vector3::new(0.3, 0.2, 0.1);
    let base = render(&scene, &cam, bg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut permuted = scene.clone();
    for i in (1..permuted.len()).rev() {
        permuted.swap(i, rng.random_range(0..=i));
    }
    let out = render(&permuted, &cam, bg).unwrap();
    let diff = base.color.max_abs_diff(&out.color);
    assert!(diff <= 1e-6, "permutation changed image by {diff:.3e}");
}

#[test]
fn background_passes_through_untouched_pixels_exactly() {
    let cam = test_camera(64);
    // Small splat in one corner.
    let g = Gaussian3D {
        position: cam
            .unproject(&Vector2::new(6.0, 6.0), 2.0)
            .unwrap(),
        rotation: quat::IDENTITY,
        log_scale: Vector3::from_element(0.02_f64.ln()),
        logit_opacity: 1.0,
        color: Vector3::new(1.0, 1.0, 1.0),
    };
    let bg = Vector3::new(0.123456789, 0.42, 0.9);
    let out = render(&[g], &cam, bg).unwrap();
    // The far corner is untouched: bit-exact background there.
    assert_eq!(out.color.get(60, 60), [0.123456789, 0.42, 0.9]);
    assert_eq!(out.alpha.get(60, 60), 0.0);
    // And the splat did land where expected.
    assert!(out.alpha.get(6, 6) > 0.5);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cam = test_camera(16);
    let scene = common::random_scene(3, 10, &cam);
    let upstream = Image::new(16, 16);
    let grads = render_backward(&scene, &cam, Vector3::zeros(), &upstream).unwrap();
    for i in 0..scene.len() {
        assert_eq!(grads.d_position[i], Vector3::zeros());
        assert_eq!(grads.d_rotation[i], [0.0; 4]);
        assert_eq!(grads.d_log_scale[i], Vector3::zeros());
        assert_eq!(grads.d_logit_opacity[i], 0.0);
        assert_eq!(grads.d_color[i], Vector3::zeros());
    }
}

/// For a lone nearly-opaque Gaussian, dC/dc at each pixel is alpha * T with
/// T = 1, so the color gradient is the upstream gradient weighted by the
/// footprint.
#[test]
fn lone_gaussian_color_gradient_is_footprint_weighted_upstream() {
    let cam = test_camera(33);
    let g = Gaussian3D {
        position: Vector3::new(0.0, 0.0, 2.0),
        rotation: quat::IDENTITY,
        log_scale: Vector3::from_element(0.05_f64.ln()),
        logit_opacity: 9.0,
        color: Vector3::new(0.5, 0.5, 0.5),
    };
    let mut upstream = Image::new(33, 33);
    upstream.data.fill(1.0);
    let grads =
        render_backward(std::slice::from_ref(&g), &cam, Vector3::zeros(), &upstream).unwrap();

    // Expected: sum over pixels of alpha * T for this single splat.
    let out = render(std::slice::from_ref(&g), &cam, Vector3::zeros()).unwrap();
    let footprint: f64 = out.alpha.data.iter().sum();
    for ch in 0..3 {
        let got = grads.d_color[0][ch];
        assert!(
            (got - footprint).abs() < 1e-9 * footprint.max(1.0),
            "channel {ch}: {got} vs {footprint}"
        );
    }
}
