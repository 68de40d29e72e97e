//! Finite-difference validation of the renderer's analytic backward pass.
//!
//! The probe loss is L = sum_pixels upstream ⊙ color, which makes the
//! upstream image itself the exact dL/dcolor, so `render_backward` returns
//! dL/dparam directly. Central differences use h = 1e-4; tolerance is
//! relative 1e-3 with an absolute floor of 1e-6.

mod common;

use coinsplat::camera::Camera;
use coinsplat::image::Image;
use coinsplat::render::{render, render_backward, TRANSMITTANCE_MIN};
use coinsplat::scene::Gaussian3D;
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;

fn probe_loss(scene: &[Gaussian3D], cam: &Camera, bg: Vector3<f64>, upstream: &Image) -> f64 {
    let out = render(scene, cam, bg).unwrap();
    out.color
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(c, u)| c * u)
        .sum()
}

fn random_upstream(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(width, height);
    for v in img.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    img
}

/// Scenes whose worst-pixel transmittance stays well above the termination
/// threshold; near the threshold the compositing cutoff makes finite
/// differences ill-posed (the function itself has a step there).
fn well_conditioned_scene(base_seed: u64, n: usize, cam: &Camera) -> Vec<Gaussian3D> {
    for attempt in 0..20 {
        let scene = common::random_scene(base_seed * 100 + attempt, n, cam);
        let out = render(&scene, cam, Vector3::zeros()).unwrap();
        let min_t = out
            .transmittance
            .data
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_t > 100.0 * TRANSMITTANCE_MIN {
            return scene;
        }
    }
    panic!("no well-conditioned scene found for seed {base_seed}");
}

fn check_scene(seed: u64, n: usize) -> (usize, f64) {
    let cam = common::small_camera();
    let bg = Vector3::new(0.15, 0.25, 0.35);
    let scene = well_conditioned_scene(seed, n, &cam);
    let upstream = random_upstream(seed ^ 0xABCD, cam.width(), cam.height());

    let grads = render_backward(&scene, &cam, bg, &upstream).unwrap();

    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    let mut perturbed = scene.clone();
    for i in 0..scene.len() {
        // 14 parameters per gaussian: position 3, rotation 4, log_scale 3,
        // logit_opacity 1, color 3.
        for p in 0..14 {
            let (get, set): (fn(&Gaussian3D, usize) -> f64, fn(&mut Gaussian3D, usize, f64)) =
                (param_get, param_set);
            let original = get(&scene[i], p);

            set(&mut perturbed[i], p, original + FD_STEP);
            let plus = probe_loss(&perturbed, &cam, bg, &upstream);
            set(&mut perturbed[i], p, original - FD_STEP);
            let minus = probe_loss(&perturbed, &cam, bg, &upstream);
            set(&mut perturbed[i], p, original);

            let fd = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grad_get(&grads, i, p);
            common::assert_grad_close(&format!("gaussian {i} param {p} (seed {seed})"), analytic, fd);
            worst = worst.max((analytic - fd).abs());
            checked += 1;
        }
    }
    (checked, worst)
}

fn param_get(g: &Gaussian3D, p: usize) -> f64 {
    match p {
        0..=2 => g.position[p],
        3..=6 => g.rotation[p - 3],
        7..=9 => g.log_scale[p - 7],
        10 => g.logit_opacity,
        _ => g.color[p - 11],
    }
}

fn param_set(g: &mut Gaussian3D, p: usize, v: f64) {
    match p {
        0..=2 => g.position[p] = v,
        3..=6 => g.rotation[p - 3] = v,
        7..=9 => g.log_scale[p - 7] = v,
        10 => g.logit_opacity = v,
        _ => g.color[p - 11] = v,
    }
}

fn grad_get(grads: &coinsplat::render::GradientBuffer, i: usize, p: usize) -> f64 {
    match p {
        0..=2 => grads.d_position[i][p],
        3..=6 => grads.d_rotation[i][p - 3],
        7..=9 => grads.d_log_scale[i][p - 7],
        10 => grads.d_logit_opacity[i],
        _ => grads.d_color[i][p - 11],
    }
}

#[test]
fn renderer_gradients_match_finite_differences() {
    let mut total = 0usize;
    for seed in 1..=5u64 {
        let (checked, worst) = check_scene(seed, 10);
        println!("seed {seed}: {checked} parameters checked, worst abs diff {worst:.3e}");
        total += checked;
    }
    assert_eq!(total, 5 * 10 * 14);
}

/// Larger scene, run once: 20 gaussians exercises deeper compositing chains.
#[test]
fn renderer_gradients_dense_scene() {
    let (checked, worst) = check_scene(77, 20);
    println!("{checked} parameters checked, worst abs diff {worst:.3e}");
    assert_eq!(checked, 20 * 14);
}
