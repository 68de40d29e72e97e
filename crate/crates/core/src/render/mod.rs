//! Differentiable CPU rasterizer for 3D Gaussian scenes.
//!
//! The fast path rasterizes 16x16 tiles with per-tile splat lists and
//! front-to-back alpha compositing; [`naive::render_naive`] keeps the
//! unoptimized per-pixel summation as the correctness oracle. The backward
//! pass ([`backward::render_backward`]) produces exact analytic gradients of
//! the compositing equation for every Gaussian parameter.
//!
//! Determinism: splats are globally sorted by (depth, index) and composited
//! in that order per pixel; gradient partials are reduced in fixed tile
//! order, so outputs are bit-identical for any thread count.

mod backward;
mod bench;
mod forward;
mod naive;
pub mod project;

pub use backward::{render_backward, render_backward_with_colors, GradientBuffer};
pub use bench::{render_benchmark, BenchReport, StageBreakdown};
pub use forward::{render, render_with_colors};
pub use naive::{render_naive, render_naive_with_colors};
pub use project::{project_gaussian, GaussianProjection};

use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, ScalarImage};
use crate::scene::Gaussian3D;

/// Side length of a rasterizer tile, in pixels.
pub const TILE_SIZE: usize = 16;
/// Compositing terminates once transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Per-pixel contributions below this opacity are treated as zero; it sets
/// the evaluation radius of every splat.
pub const MIN_CONTRIB: f64 = 1e-12;
/// 2D covariances with determinant below this are skipped as non-invertible.
pub const MIN_COV2D_DET: f64 = 1e-12;

/// Rasterizer output planes plus bookkeeping.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// H x W x 3 color in [0, 1].
    pub color: Image,
    /// Alpha-weighted expected depth; 0 where alpha is 0.
    pub depth: ScalarImage,
    /// Accumulated opacity in [0, 1].
    pub alpha: ScalarImage,
    /// Final transmittance (background weight); alpha + transmittance = 1.
    pub transmittance: ScalarImage,
    pub stats: RenderStats,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RenderStats {
    pub gaussian_count: usize,
    pub culled_count: usize,
    pub skipped_count: usize,
    pub ms_project: f64,
    pub ms_sort: f64,
    pub ms_bin: f64,
    pub ms_composite: f64,
    pub ms_total: f64,
}

/// One projected splat ready for compositing, in front-to-back order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub mean: Vector2<f64>,
    /// Inverse 2D covariance (a, b, c) with M = [[a, b], [b, c]].
    pub conic: [f64; 3],
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub depth: f64,
    /// Squared Mahalanobis cutoff: contributions beyond it fall below
    /// [`MIN_CONTRIB`] and are not evaluated.
    pub rho_max: f64,
    /// Index into the caller's gaussian array.
    pub index: usize,
}

pub(crate) struct Prepared {
    pub splats: Vec<Splat>,
    /// Per-tile positions into `splats`, each list depth-ordered.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub culled: usize,
    pub skipped: usize,
    pub ms_project: f64,
    pub ms_sort: f64,
    pub ms_bin: f64,
}

pub(crate) fn check_colors(gaussians: &[Gaussian3D], colors: Option<&[Vector3<f64>]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != gaussians.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} override colors for {} gaussians",
                c.len(),
                gaussians.len()
            )));
        }
    }
    Ok(())
}

/// Projects, sorts, and bins the scene for one camera.
pub(crate) fn prepare(
    gaussians: &[Gaussian3D],
    colors: Option<&[Vector3<f64>]>,
    cam: &Camera,
) -> Result<Prepared> {
    check_colors(gaussians, colors)?;
    let t0 = std::time::Instant::now();

    let mut culled = 0usize;
    let mut skipped = 0usize;
    let mut splats = Vec::with_capacity(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        let Some(p) = project::project_gaussian(g, cam) else {
            culled += 1;
            continue;
        };
        let (a, b, c) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
        let det = a * c - b * b;
        if !det.is_finite() || det < MIN_COV2D_DET {
            skipped += 1;
            continue;
        }
        let opacity = g.opacity();
        let rho_max = 2.0 * (opacity / MIN_CONTRIB).ln();
        if rho_max <= 0.0 {
            // Effectively transparent; keeps zero gradients without lists.
            continue;
        }
        let color = colors.map_or(g.color, |cs| cs[i]);
        splats.push(Splat {
            mean: p.mean2d,
            conic: [c / det, -b / det, a / det],
            color,
            opacity,
            depth: p.depth,
            rho_max,
            index: i,
        });
    }
    let ms_project = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = std::time::Instant::now();
    splats.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .expect("depths are finite")
            .then(x.index.cmp(&y.index))
    });
    let ms_sort = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = std::time::Instant::now();
    let width = cam.width();
    let height = cam.height();
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pos, s) in splats.iter().enumerate() {
        // AABB of the rho_max ellipse: +/- sqrt(rho_max * cov_ii).
        let det = s.conic[0] * s.conic[2] - s.conic[1] * s.conic[1];
        let cov_xx = s.conic[2] / det;
        let cov_yy = s.conic[0] / det;
        let half_x = (s.rho_max * cov_xx).sqrt();
        let half_y = (s.rho_max * cov_yy).sqrt();
        let x0 = (s.mean.x - half_x).ceil().max(0.0) as usize;
        let y0 = (s.mean.y - half_y).ceil().max(0.0) as usize;
        let x1 = (s.mean.x + half_x).floor().min((width - 1) as f64);
        let y1 = (s.mean.y + half_y).floor().min((height - 1) as f64);
        if x1 < x0 as f64 || y1 < y0 as f64 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for ty in (y0 / TILE_SIZE)..=(y1 / TILE_SIZE) {
            for tx in (x0 / TILE_SIZE)..=(x1 / TILE_SIZE) {
                tiles[ty * tiles_x + tx].push(pos as u32);
            }
        }
    }
    let ms_bin = t2.elapsed().as_secs_f64() * 1e3;

    Ok(Prepared {
        splats,
        tiles,
        tiles_x,
        tiles_y,
        culled,
        skipped,
        ms_project,
        ms_sort,
        ms_bin,
    })
}

/// Evaluates one splat at a pixel center; `None` when outside its cutoff.
#[inline(always)]
pub(crate) fn splat_weight(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.mean.x;
    let dy = py - s.mean.y;
    let rho = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if rho >= s.rho_max {
        return None;
    }
    let gauss = (-0.5 * rho).exp();
    Some((gauss, s.opacity * gauss, dx, dy))
}
