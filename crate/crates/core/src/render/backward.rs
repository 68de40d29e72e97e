//! Analytic backward pass: gradients of the composited color image with
//! respect to every Gaussian parameter and its color.
//!
//! The pixel loop mirrors the forward walk exactly (same ordering, same
//! cutoffs, same termination), so the gradients are those of the function
//! the forward pass actually computes. Per-tile partial gradients are
//! reduced in fixed tile order, making results independent of thread count.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::quat::{self, Quat};
use crate::scene::Gaussian3D;

use super::project::projection_intermediates;
use super::{prepare, splat_weight, Prepared, Splat, TILE_SIZE, TRANSMITTANCE_MIN};

/// Per-Gaussian gradients; layout mirrors the scene. Culled Gaussians keep
/// zero entries.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub d_position: Vec<Vector3<f64>>,
    pub d_rotation: Vec<Quat>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_logit_opacity: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_position: vec![Vector3::zeros(); n],
            d_rotation: vec![[0.0; 4]; n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_logit_opacity: vec![0.0; n],
            d_color: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_logit_opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_logit_opacity.is_empty()
    }

    fn check_finite(&self) -> Result<()> {
        for i in 0..self.len() {
            let finite = self.d_position[i].iter().all(|v| v.is_finite())
                && self.d_rotation[i].iter().all(|v| v.is_finite())
                && self.d_log_scale[i].iter().all(|v| v.is_finite())
                && self.d_logit_opacity[i].is_finite()
                && self.d_color[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NanGradient { index: i });
            }
        }
        Ok(())
    }
}

/// Screen-space gradient accumulators for one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    d_color: [f64; 3],
    d_opacity: f64,
    d_mean: [f64; 2],
    /// Gradient w.r.t. the conic entries (a, b, c), with the b slot holding
    /// the full coefficient of both symmetric off-diagonal entries.
    d_conic: [f64; 3],
}

pub fn render_backward(
    gaussians: &[Gaussian3D],
    cam: &Camera,
    background: Vector3<f64>,
    upstream: &Image,
) -> Result<GradientBuffer> {
    render_backward_with_colors(gaussians, None, cam, background, upstream)
}

pub fn render_backward_with_colors(
    gaussians: &[Gaussian3D],
    colors: Option<&[Vector3<f64>]>,
    cam: &Camera,
    background: Vector3<f64>,
    upstream: &Image,
) -> Result<GradientBuffer> {
    if upstream.width != cam.width() || upstream.height != cam.height() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient is {}x{}, camera is {}x{}",
            upstream.width,
            upstream.height,
            cam.width(),
            cam.height()
        )));
    }
    let prepared = prepare(gaussians, colors, cam)?;
    let width = cam.width();
    let height = cam.height();

    // Screen-space accumulation, parallel over tile bands. Each tile stores
    // gradients per list entry; reduction walks tiles in index order.
    let bands: Vec<Vec<(usize, Vec<SplatGrad>)>> = (0..prepared.tiles_y)
        .into_par_iter()
        .map(|band| {
            let mut out = Vec::with_capacity(prepared.tiles_x);
            for tx in 0..prepared.tiles_x {
                let tile_idx = band * prepared.tiles_x + tx;
                let grads = accumulate_tile(
                    &prepared, tile_idx, tx, band, width, height, &background, upstream,
                );
                out.push((tile_idx, grads));
            }
            out
        })
        .collect();

    let mut screen: Vec<SplatGrad> = vec![SplatGrad::default(); prepared.splats.len()];
    for band in bands {
        for (tile_idx, grads) in band {
            let list = &prepared.tiles[tile_idx];
            for (k, g) in grads.iter().enumerate() {
                let pos = list[k] as usize;
                let acc = &mut screen[pos];
                for ch in 0..3 {
                    acc.d_color[ch] += g.d_color[ch];
                }
                acc.d_opacity += g.d_opacity;
                acc.d_mean[0] += g.d_mean[0];
                acc.d_mean[1] += g.d_mean[1];
                acc.d_conic[0] += g.d_conic[0];
                acc.d_conic[1] += g.d_conic[1];
                acc.d_conic[2] += g.d_conic[2];
            }
        }
    }

    // Chain screen-space gradients through the projection per gaussian.
    let mut buffer = GradientBuffer::zeros(gaussians.len());
    for (s, g) in prepared.splats.iter().zip(&screen) {
        let i = s.index;
        let (d_pos, d_rot, d_scale, d_logit) =
            projection_backward(&gaussians[i], cam, s, g);
        buffer.d_position[i] = d_pos;
        buffer.d_rotation[i] = d_rot;
        buffer.d_log_scale[i] = d_scale;
        buffer.d_logit_opacity[i] = d_logit;
        buffer.d_color[i] = Vector3::new(g.d_color[0], g.d_color[1], g.d_color[2]);
    }
    buffer.check_finite()?;
    Ok(buffer)
}

/// Walks one tile's pixels, mirroring the forward composite, and returns
/// per-list-entry gradients.
#[allow(clippy::too_many_arguments)]
fn accumulate_tile(
    prepared: &Prepared,
    tile_idx: usize,
    tx: usize,
    band: usize,
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    upstream: &Image,
) -> Vec<SplatGrad> {
    let list = &prepared.tiles[tile_idx];
    let mut grads = vec![SplatGrad::default(); list.len()];
    if list.is_empty() {
        return grads;
    }
    let x0 = tx * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(width);
    let y0 = band * TILE_SIZE;
    let y1 = (y0 + TILE_SIZE).min(height);

    // Scratch of contributors for the current pixel.
    struct Contrib {
        k: usize,
        alpha: f64,
        gauss: f64,
        trans: f64,
        dx: f64,
        dy: f64,
    }
    let mut scratch: Vec<Contrib> = Vec::with_capacity(list.len());

    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64;
            let py = y as f64;
            scratch.clear();
            let mut trans = 1.0;
            for (k, &pos) in list.iter().enumerate() {
                if trans < TRANSMITTANCE_MIN {
                    break;
                }
                let s = &prepared.splats[pos as usize];
                let Some((gauss, alpha, dx, dy)) = splat_weight(s, px, py) else {
                    continue;
                };
                scratch.push(Contrib {
                    k,
                    alpha,
                    gauss,
                    trans,
                    dx,
                    dy,
                });
                trans *= 1.0 - alpha;
            }
            if scratch.is_empty() {
                continue;
            }

            let up = upstream.get(x, y);
            // Reverse walk: r is the color the compositing would produce
            // behind the current splat if that splat were removed.
            let mut r = *background;
            for c in scratch.iter().rev() {
                let s = &prepared.splats[list[c.k] as usize];
                let g = &mut grads[c.k];

                // d color: alpha * T per channel.
                let w = c.alpha * c.trans;
                g.d_color[0] += up[0] * w;
                g.d_color[1] += up[1] * w;
                g.d_color[2] += up[2] * w;

                // d alpha: T * (c - r) dotted with the upstream gradient.
                let d_alpha = c.trans
                    * (up[0] * (s.color.x - r.x)
                        + up[1] * (s.color.y - r.y)
                        + up[2] * (s.color.z - r.z));

                g.d_opacity += d_alpha * c.gauss;
                // alpha = opacity * exp(-rho / 2)
                let d_rho = -0.5 * d_alpha * s.opacity * c.gauss;

                let (a, b, cc) = (s.conic[0], s.conic[1], s.conic[2]);
                g.d_conic[0] += d_rho * c.dx * c.dx;
                g.d_conic[1] += d_rho * 2.0 * c.dx * c.dy;
                g.d_conic[2] += d_rho * c.dy * c.dy;
                // rho depends on the mean through dx = px - mean_x.
                let m_dx = a * c.dx + b * c.dy;
                let m_dy = b * c.dx + cc * c.dy;
                g.d_mean[0] += d_rho * (-2.0 * m_dx);
                g.d_mean[1] += d_rho * (-2.0 * m_dy);

                r = s.color * c.alpha + r * (1.0 - c.alpha);
            }
        }
    }
    grads
}

/// Chains screen-space gradients (mean, conic, opacity) back to the world
/// parameters of one Gaussian.
fn projection_backward(
    g: &Gaussian3D,
    cam: &Camera,
    splat: &Splat,
    grad: &SplatGrad,
) -> (Vector3<f64>, Quat, Vector3<f64>, f64) {
    let inter = projection_intermediates(g, cam);
    let p = &inter.p_cam;
    let j = inter.j;
    let w_rot = cam.pose.rotation;

    // Conic -> covariance: M = Sigma'^-1, dL/dSigma' = -M G_M M.
    let m = Matrix2::new(splat.conic[0], splat.conic[1], splat.conic[1], splat.conic[2]);
    let gm = Matrix2::new(
        grad.d_conic[0],
        grad.d_conic[1] * 0.5,
        grad.d_conic[1] * 0.5,
        grad.d_conic[2],
    );
    let d_cov2d = -(m * gm * m);

    // Sigma' = J Sigma_cam J^T + floor; floor has zero derivative.
    let sigma_cam = inter.sigma_cam;
    let d_j = (d_cov2d + d_cov2d.transpose()) * j * sigma_cam;
    let d_sigma_cam = j.transpose() * d_cov2d * j;

    // Sigma_cam = W Sigma W^T.
    let d_sigma = w_rot.transpose() * d_sigma_cam * w_rot;

    // Sigma = A A^T with A = R diag(exp(s)).
    let r = inter.rot_world;
    let es = inter.scale;
    let a_mat = Matrix3::from_columns(&[
        r.column(0) * es.x,
        r.column(1) * es.y,
        r.column(2) * es.z,
    ]);
    let d_a = (d_sigma + d_sigma.transpose()) * a_mat;

    let mut d_log_scale = Vector3::zeros();
    let mut d_r = Matrix3::zeros();
    for col in 0..3 {
        let e = es[col];
        let mut s_acc = 0.0;
        for row in 0..3 {
            d_r[(row, col)] = d_a[(row, col)] * e;
            s_acc += d_a[(row, col)] * r[(row, col)] * e;
        }
        d_log_scale[col] = s_acc;
    }

    // Rotation matrix -> unit quaternion -> raw quaternion.
    let jq = quat::matrix_jacobian(&inter.q_hat);
    let mut d_qhat = [0.0; 4];
    for k in 0..4 {
        d_qhat[k] = (0..3)
            .map(|i| (0..3).map(|l| d_r[(i, l)] * jq[k][(i, l)]).sum::<f64>())
            .sum();
    }
    let d_rotation = quat::normalize_backward(&g.rotation, &d_qhat);

    // Mean and Jacobian both depend on the camera-frame point.
    let d_mean = Vector2::new(grad.d_mean[0], grad.d_mean[1]);
    let mut d_p_cam = j.transpose() * d_mean;
    let (fx, fy) = (cam.fx(), cam.fy());
    let (x, y, z) = (p.x, p.y, p.z);
    let z2 = z * z;
    let z3 = z2 * z;
    d_p_cam.x += d_j[(0, 2)] * (-fx / z2);
    d_p_cam.y += d_j[(1, 2)] * (-fy / z2);
    d_p_cam.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(0, 2)] * (2.0 * fx * x / z3)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(1, 2)] * (2.0 * fy * y / z3);

    let d_position = w_rot.transpose() * d_p_cam;

    let op = splat.opacity;
    let d_logit_opacity = grad.d_opacity * op * (1.0 - op);

    (d_position, d_rotation, d_log_scale, d_logit_opacity)
}
