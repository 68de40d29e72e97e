//! Tile-based forward rasterization.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::Result;
use crate::image::{Image, ScalarImage};
use crate::scene::Gaussian3D;

use super::{prepare, splat_weight, Prepared, RenderOutput, RenderStats, TILE_SIZE, TRANSMITTANCE_MIN};

/// Renders the scene with each Gaussian's own color.
pub fn render(gaussians: &[Gaussian3D], cam: &Camera, background: Vector3<f64>) -> Result<RenderOutput> {
    render_with_colors(gaussians, None, cam, background)
}

/// Renders with per-Gaussian override colors (used for the combined
/// base-plus-offset images during training).
pub fn render_with_colors(
    gaussians: &[Gaussian3D],
    colors: Option<&[Vector3<f64>]>,
    cam: &Camera,
    background: Vector3<f64>,
) -> Result<RenderOutput> {
    let t0 = std::time::Instant::now();
    let prepared = prepare(gaussians, colors, cam)?;
    let width = cam.width();
    let height = cam.height();

    let mut color = Image::new(width, height);
    let mut depth = ScalarImage::new(width, height);
    let mut alpha = ScalarImage::new(width, height);
    let mut transmittance = ScalarImage::new(width, height);

    let t1 = std::time::Instant::now();
    // Parallelize over horizontal tile bands; each band owns disjoint rows
    // of all four output planes.
    let band_px = TILE_SIZE * width;
    color
        .data
        .par_chunks_mut(band_px * 3)
        .zip(depth.data.par_chunks_mut(band_px))
        .zip(alpha.data.par_chunks_mut(band_px))
        .zip(transmittance.data.par_chunks_mut(band_px))
        .enumerate()
        .for_each(|(band, (((c_band, d_band), a_band), t_band))| {
            composite_band(
                &prepared, band, width, height, &background, c_band, d_band, a_band, t_band,
            );
        });
    let ms_composite = t1.elapsed().as_secs_f64() * 1e3;

    let stats = RenderStats {
        gaussian_count: gaussians.len(),
        culled_count: prepared.culled,
        skipped_count: prepared.skipped,
        ms_project: prepared.ms_project,
        ms_sort: prepared.ms_sort,
        ms_bin: prepared.ms_bin,
        ms_composite,
        ms_total: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RenderOutput {
        color,
        depth,
        alpha,
        transmittance,
        stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn composite_band(
    prepared: &Prepared,
    band: usize,
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    c_band: &mut [f64],
    d_band: &mut [f64],
    a_band: &mut [f64],
    t_band: &mut [f64],
) {
    let y0 = band * TILE_SIZE;
    let y1 = (y0 + TILE_SIZE).min(height);
    for tx in 0..prepared.tiles_x {
        let list = &prepared.tiles[band * prepared.tiles_x + tx];
        let x0 = tx * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(width);
        for y in y0..y1 {
            let row = (y - y0) * width;
            for x in x0..x1 {
                let px = x as f64;
                let py = y as f64;
                let mut trans = 1.0;
                let mut acc = Vector3::zeros();
                let mut acc_alpha = 0.0;
                let mut acc_depth = 0.0;
                for &pos in list.iter() {
                    if trans < TRANSMITTANCE_MIN {
                        break;
                    }
                    let s = &prepared.splats[pos as usize];
                    let Some((_, a, _, _)) = splat_weight(s, px, py) else {
                        continue;
                    };
                    let w = a * trans;
                    acc += s.color * w;
                    acc_alpha += w;
                    acc_depth += s.depth * w;
                    trans *= 1.0 - a;
                }
                acc += background * trans;
                let idx = row + x;
                c_band[idx * 3] = acc.x;
                c_band[idx * 3 + 1] = acc.y;
                c_band[idx * 3 + 2] = acc.z;
                d_band[idx] = acc_depth / acc_alpha.max(1e-8);
                a_band[idx] = acc_alpha;
                t_band[idx] = trans;
            }
        }
    }
}
