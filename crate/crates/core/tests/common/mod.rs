//! Shared scene generators and tolerance helpers for the integration tests.
#![allow(dead_code)]

use coinsplat::camera::{Camera, Intrinsics, RigidTransform};
use coinsplat::quat;
use coinsplat::scene::Gaussian3D;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// 16x16 camera used by the gradient-check scenes.
pub fn small_camera() -> Camera {
    Camera::new(
        Intrinsics {
            fx: 24.0,
            fy: 24.0,
            cx: 7.5,
            cy: 7.5,
            width: 16,
            height: 16,
        },
        RigidTransform::identity(),
    )
    .unwrap()
}

/// Random Gaussians spread over the camera frustum interior with moderate
/// opacity, sized a couple of pixels on screen. Keeps every 3-sigma ellipse
/// well inside the image so whole-Gaussian culling boundaries never sit
/// next to a finite-difference probe.
pub fn random_scene(seed: u64, n: usize, cam: &Camera) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let w = cam.width() as f64;
    let h = cam.height() as f64;
    while out.len() < n {
        let depth = rng.random_range(1.0..3.0);
        // Pick target pixel in the interior, lift to world.
        let px = rng.random_range(0.25 * w..0.75 * w);
        let py = rng.random_range(0.25 * h..0.75 * h);
        let pos = cam
            .unproject(&nalgebra::Vector2::new(px, py), depth)
            .unwrap();
        // Screen sigma around 0.7..1.8 px for this camera.
        let sigma_world = rng.random_range(0.03..0.075) * depth;
        let log_scale = Vector3::new(
            (sigma_world * rng.random_range(0.7..1.4)).ln(),
            (sigma_world * rng.random_range(0.7..1.4)).ln(),
            (sigma_world * rng.random_range(0.7..1.4)).ln(),
        );
        out.push(Gaussian3D {
            position: pos,
            rotation: quat::normalize(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]),
            log_scale,
            logit_opacity: rng.random_range(-2.5..0.5),
            color: Vector3::new(
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            ),
        });
    }
    out
}

/// Spec tolerance for gradient checks: relative error <= 1e-3 with an
/// absolute floor of 1e-6.
pub fn grad_close(analytic: f64, fd: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff <= 1e-6_f64.max(1e-3 * analytic.abs().max(fd.abs()))
}

pub fn assert_grad_close(what: &str, analytic: f64, fd: f64) {
    assert!(
        grad_close(analytic, fd),
        "{what}: analytic {analytic:.9e} vs finite-difference {fd:.9e}"
    );
}
