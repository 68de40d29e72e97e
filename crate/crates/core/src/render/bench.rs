//! Forward-render benchmarking with per-stage timing.

use nalgebra::Vector3;
use serde::Serialize;

use crate::camera::Camera;
use crate::error::Result;
use crate::scene::Gaussian3D;

use super::forward::render;
use super::RenderOutput;

#[derive(Debug, Clone, Serialize)]
pub struct StageBreakdown {
    pub ms_project: f64,
    pub ms_sort: f64,
    pub ms_bin: f64,
    pub ms_composite: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub gaussian_count: usize,
    pub width: usize,
    pub height: usize,
    pub repeats: usize,
    pub threads: usize,
    pub ms_per_frame_median: f64,
    pub ms_per_frame_min: f64,
    pub ms_per_frame_max: f64,
    pub frames_per_second: f64,
    /// Breakdown of the median run.
    pub stages: StageBreakdown,
}

/// Renders the scene `repeats` times and reports the median frame time.
/// The rendered image is identical across repeats; the caller can hash
/// `RenderOutput::color` to verify.
pub fn render_benchmark(
    gaussians: &[Gaussian3D],
    cam: &Camera,
    background: Vector3<f64>,
    repeats: usize,
) -> Result<(BenchReport, RenderOutput)> {
    let repeats = repeats.max(1);
    let mut runs: Vec<RenderOutput> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        runs.push(render(gaussians, cam, background)?);
    }
    let mut order: Vec<usize> = (0..repeats).collect();
    order.sort_by(|&a, &b| {
        runs[a]
            .stats
            .ms_total
            .partial_cmp(&runs[b].stats.ms_total)
            .unwrap()
    });
    let median_idx = order[repeats / 2];
    let median = &runs[median_idx].stats;
    let report = BenchReport {
        gaussian_count: gaussians.len(),
        width: cam.width(),
        height: cam.height(),
        repeats,
        threads: rayon::current_num_threads(),
        ms_per_frame_median: median.ms_total,
        ms_per_frame_min: runs[order[0]].stats.ms_total,
        ms_per_frame_max: runs[order[repeats - 1]].stats.ms_total,
        frames_per_second: 1000.0 / median.ms_total,
        stages: StageBreakdown {
            ms_project: median.ms_project,
            ms_sort: median.ms_sort,
            ms_bin: median.ms_bin,
            ms_composite: median.ms_composite,
        },
    };
    let output = runs.swap_remove(median_idx);
    Ok((report, output))
}
