//! Reference per-pixel rasterizer: every pixel walks every projected splat
//! with no tiling and no evaluation radius. O(N * H * W), kept as the
//! correctness oracle for the tile path.

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::Result;
use crate::image::{Image, ScalarImage};
use crate::scene::Gaussian3D;

use super::project::project_gaussian;
use super::{check_colors, RenderOutput, RenderStats, MIN_COV2D_DET, TRANSMITTANCE_MIN};

pub fn render_naive(
    gaussians: &[Gaussian3D],
    cam: &Camera,
    background: Vector3<f64>,
) -> Result<RenderOutput> {
    render_naive_with_colors(gaussians, None, cam, background)
}

pub fn render_naive_with_colors(
    gaussians: &[Gaussian3D],
    colors: Option<&[Vector3<f64>]>,
    cam: &Camera,
    background: Vector3<f64>,
) -> Result<RenderOutput> {
    check_colors(gaussians, colors)?;
    let t0 = std::time::Instant::now();

    struct NaiveSplat {
        mean: nalgebra::Vector2<f64>,
        conic: [f64; 3],
        color: Vector3<f64>,
        opacity: f64,
        depth: f64,
        index: usize,
    }

    let mut culled = 0usize;
    let mut skipped = 0usize;
    let mut splats = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        let Some(p) = project_gaussian(g, cam) else {
            culled += 1;
            continue;
        };
        let (a, b, c) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
        let det = a * c - b * b;
        if !det.is_finite() || det < MIN_COV2D_DET {
            skipped += 1;
            continue;
        }
        splats.push(NaiveSplat {
            mean: p.mean2d,
            conic: [c / det, -b / det, a / det],
            color: colors.map_or(g.color, |cs| cs[i]),
            opacity: g.opacity(),
            depth: p.depth,
            index: i,
        });
    }
    splats.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .expect("depths are finite")
            .then(x.index.cmp(&y.index))
    });

    let width = cam.width();
    let height = cam.height();
    let mut color = Image::new(width, height);
    let mut depth = ScalarImage::new(width, height);
    let mut alpha = ScalarImage::new(width, height);
    let mut transmittance = ScalarImage::new(width, height);

    for y in 0..height {
        for x in 0..width {
            let px = x as f64;
            let py = y as f64;
            let mut trans = 1.0;
            let mut acc = Vector3::zeros();
            let mut acc_alpha = 0.0;
            let mut acc_depth = 0.0;
            for s in &splats {
                if trans < TRANSMITTANCE_MIN {
                    break;
                }
                let dx = px - s.mean.x;
                let dy = py - s.mean.y;
                let rho =
                    s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                let a = s.opacity * (-0.5 * rho).exp();
                let w = a * trans;
                acc += s.color * w;
                acc_alpha += w;
                acc_depth += s.depth * w;
                trans *= 1.0 - a;
            }
            acc += background * trans;
            color.set(x, y, [acc.x, acc.y, acc.z]);
            depth.set(x, y, acc_depth / acc_alpha.max(1e-8));
            alpha.set(x, y, acc_alpha);
            transmittance.set(x, y, trans);
        }
    }

    let stats = RenderStats {
        gaussian_count: gaussians.len(),
        culled_count: culled,
        skipped_count: skipped,
        ms_total: t0.elapsed().as_secs_f64() * 1e3,
        ..Default::default()
    };
    Ok(RenderOutput {
        color,
        depth,
        alpha,
        transmittance,
        stats,
    })
}
