//! Joint training of a consistent Gaussian base model and a per-view
//! color-offset network.
//!
//! The base scene must explain every view with one shared set of colors;
//! a small two-layer network conditioned on a learnable per-view embedding
//! absorbs whatever is inconsistent between views as per-Gaussian color
//! offsets. Pixel losses supervise the combined render, a blur-tolerant
//! structural loss supervises the base render alone, and an L1 penalty
//! keeps offsets minimal, so view-specific defects land in the offset
//! branch instead of corrupting the shared model.

pub mod embedding;
pub mod loss;
pub mod mlp;
pub mod optim;
mod train;

pub use embedding::{position_embedding, position_embedding_matrix, ViewEmbeddingTable};
pub use mlp::{InconsistencyMlp, MlpGrads};
pub use train::{train, Trainer};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::quat::Quat;
use crate::render::{render_backward_with_colors, render_with_colors, RenderOutput};
use crate::scene::{realize_pose_backward, GaussianScene};

use loss::{l1_with_grad, ssim_with_grad, PerceptualLoss, PyramidPerceptual};

/// Training hyper-parameters. The loss weights follow the published
/// configuration (lambda_l1 0.8, lambda_ssim 0.2, lambda_perceptual 0.05,
/// lambda_offset 1); the two-phase schedule keeps a 1:3 ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_perceptual: f64,
    pub lambda_offset: f64,

    pub phase1_iters: u64,
    pub phase2_iters: u64,

    pub lr_position: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_mlp: f64,

    /// View-embedding dimension (d).
    pub embed_dim: usize,
    /// Hidden width of the offset network (W).
    pub hidden_dim: usize,
    /// Sinusoidal frequency count for position embeddings (L).
    pub position_frequencies: usize,

    pub seed: u64,
    pub background: [f64; 3],
    pub log_interval: u64,
    /// Checkpoint every this many iterations; 0 disables periodic
    /// checkpoints (the final one is always written by the CLI).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lambda_perceptual: 0.05,
            lambda_offset: 1.0,
            phase1_iters: 2000,
            phase2_iters: 6000,
            lr_position: 1.6e-4,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_mlp: 1e-3,
            embed_dim: 16,
            hidden_dim: 64,
            position_frequencies: 4,
            seed: 0,
            background: [0.0, 0.0, 0.0],
            log_interval: 50,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_perceptual", self.lambda_perceptual),
            ("lambda_offset", self.lambda_offset),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
            ("lr_mlp", self.lr_mlp),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn total_iters(&self) -> u64 {
        self.phase1_iters + self.phase2_iters
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub iteration: u64,
    pub phase: u8,
    pub l_pixel: f64,
    pub l_struc: f64,
    pub l_reg: f64,
    pub total: f64,
    pub mean_abs_offset: f64,
    pub psnr_consistent: f64,
    pub psnr_combined: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "iteration,phase,l_pixel,l_struc,l_reg,total,mean_abs_offset,psnr_consistent,psnr_combined";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.6},{:.6}",
            self.iteration,
            self.phase,
            self.l_pixel,
            self.l_struc,
            self.l_reg,
            self.total,
            self.mean_abs_offset,
            self.psnr_consistent,
            self.psnr_combined
        )
    }

    pub fn check_finite(&self, iteration: u64) -> Result<()> {
        if [self.l_pixel, self.l_struc, self.l_reg, self.total]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                context: format!("training loss at iteration {iteration}"),
            });
        }
        Ok(())
    }
}

/// Rendering mode for a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    /// Base colors only.
    Consistent,
    /// Base plus offsets computed from the reference view's embedding.
    ReferenceEmbedding,
    /// Base plus offsets from an arbitrary training view's embedding.
    ViewEmbedding(usize),
}

/// The full trainable model: mesh-bound scene, offset network, per-view
/// embeddings, and the frozen per-Gaussian position encodings.
#[derive(Debug, Clone)]
pub struct CoinModel {
    pub scene: GaussianScene,
    pub mlp: InconsistencyMlp,
    pub embeddings: ViewEmbeddingTable,
    /// 6L x N position encodings, fixed at initialization.
    pub e_g: DMatrix<f64>,
    pub position_frequencies: usize,
    pub reference_view: usize,
}

impl CoinModel {
    /// Builds a fresh model around a scene. Position encodings come from
    /// the canonical (base-mesh) Gaussian positions, normalized by the
    /// scene's bounding radius, and stay fixed afterwards.
    pub fn init(
        scene: GaussianScene,
        n_views: usize,
        reference_view: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        if reference_view >= n_views {
            return Err(Error::Config(format!(
                "reference view {reference_view} out of range for {n_views} views"
            )));
        }
        let canonical = scene.canonical_positions()?;
        let radius = canonical
            .iter()
            .map(|p| p.norm())
            .fold(0.0_f64, f64::max)
            .max(1e-9);
        let e_g = position_embedding_matrix(&canonical, radius, config.position_frequencies);
        let input_dim = config.embed_dim + 3 + 6 * config.position_frequencies;
        Ok(Self {
            scene,
            mlp: InconsistencyMlp::new(input_dim, config.hidden_dim, config.seed ^ 0x6d6c70),
            embeddings: ViewEmbeddingTable::zeros(n_views, config.embed_dim),
            e_g,
            position_frequencies: config.position_frequencies,
            reference_view,
        })
    }

    pub fn gaussian_count(&self) -> usize {
        self.scene.len()
    }

    /// Assembles the network input `[e_view, c, e_g]` for every Gaussian.
    /// The color block is a value copy: offsets do not backpropagate into
    /// the base colors through the network input.
    fn mlp_inputs(&self, e_view: &DVector<f64>, colors: &[Vector3<f64>]) -> DMatrix<f64> {
        let d = e_view.len();
        let n = colors.len();
        let dim = d + 3 + self.e_g.nrows();
        let mut x = DMatrix::zeros(dim, n);
        for j in 0..n {
            for i in 0..d {
                x[(i, j)] = e_view[i];
            }
            x[(d, j)] = colors[j].x;
            x[(d + 1, j)] = colors[j].y;
            x[(d + 2, j)] = colors[j].z;
            for i in 0..self.e_g.nrows() {
                x[(d + 3 + i, j)] = self.e_g[(i, j)];
            }
        }
        x
    }

    /// Color offsets for one view: 3 x N.
    pub fn offsets_for_view(&self, view_id: usize) -> Result<DMatrix<f64>> {
        let e_view = self.embeddings.get(view_id)?;
        let x = self.mlp_inputs(e_view, &self.scene.colors);
        Ok(self.mlp.forward_batch(&x)?.0)
    }

    /// Combined per-Gaussian colors `clamp(c + offset)` for a view.
    pub fn combined_colors(&self, view_id: usize) -> Result<Vec<Vector3<f64>>> {
        let offsets = self.offsets_for_view(view_id)?;
        Ok(self
            .scene
            .colors
            .iter()
            .enumerate()
            .map(|(j, c)| clamp_color(c + offset_col(&offsets, j)))
            .collect())
    }

    /// Renders the model under any camera in the requested mode.
    pub fn infer(&self, cam: &Camera, mode: ViewMode, background: Vector3<f64>) -> Result<RenderOutput> {
        let gaussians = self.scene.realize()?;
        match mode {
            ViewMode::Consistent => {
                let base: Vec<Vector3<f64>> =
                    self.scene.colors.iter().map(|c| clamp_color(*c)).collect();
                render_with_colors(&gaussians, Some(&base), cam, background)
            }
            ViewMode::ReferenceEmbedding => {
                let colors = self.combined_colors(self.reference_view)?;
                render_with_colors(&gaussians, Some(&colors), cam, background)
            }
            ViewMode::ViewEmbedding(view_id) => {
                let colors = self.combined_colors(view_id)?;
                render_with_colors(&gaussians, Some(&colors), cam, background)
            }
        }
    }

    /// Mean |offset| across all views, Gaussians, and channels.
    pub fn mean_abs_offset(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for view in 0..self.embeddings.n_views() {
            let offsets = self.offsets_for_view(view)?;
            total += offsets.iter().map(|v| v.abs()).sum::<f64>();
            count += offsets.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

#[inline]
pub fn clamp_color(c: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0))
}

#[inline]
fn offset_col(offsets: &DMatrix<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(offsets[(0, j)], offsets[(1, j)], offsets[(2, j)])
}

/// Gradient of `clamp(x, 0, 1)`: passes through on [0, 1] (inclusive, so a
/// parameter projected onto the boundary can still move back inside).
#[inline]
fn clamp_mask(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Gradients of one view's total loss with respect to everything trainable.
#[derive(Debug, Clone)]
pub struct CoinLossGrads {
    pub d_local_position: Vec<Vector3<f64>>,
    pub d_local_rotation: Vec<Quat>,
    pub d_relative_log_scale: Vec<Vector3<f64>>,
    pub d_logit_opacity: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_mlp: MlpGrads,
    pub d_e_view: DVector<f64>,
}

/// Loss values for one view.
#[derive(Debug, Clone, Copy)]
pub struct CoinLossValues {
    pub l_pixel: f64,
    pub l_struc: f64,
    pub l_reg: f64,
    pub mean_abs_offset: f64,
    pub psnr_consistent: f64,
    pub psnr_combined: f64,
}

impl CoinLossValues {
    pub fn total(&self) -> f64 {
        self.l_pixel + self.l_struc + self.l_reg
    }
}

/// Full per-view loss evaluation with gradients.
///
/// Routing: the pixel loss (on the combined render) reaches geometry, base
/// colors, the network, and the view embedding; the structural loss (on the
/// base render) reaches geometry and base colors only; the offset penalty
/// reaches the network and the view embedding only. The network's color
/// input is treated as a constant (a stop-gradient), so no loss reaches the
/// base colors through that path. `mlp_input_colors` pins that constant
/// branch explicitly; pass `None` to use the scene's current colors (what
/// training does). Finite-difference checks pin it so the probed function
/// matches the one the gradients describe.
#[allow(clippy::too_many_arguments)]
pub fn coin_losses(
    model: &CoinModel,
    view_id: usize,
    cam: &Camera,
    target: &Image,
    config: &TrainConfig,
    perceptual: &dyn PerceptualLoss,
    include_offsets: bool,
    mlp_input_colors: Option<&[Vector3<f64>]>,
) -> Result<(CoinLossValues, CoinLossGrads)> {
    if target.width != cam.width() || target.height != cam.height() {
        return Err(Error::DimensionMismatch(format!(
            "target image {}x{} vs camera {}x{}",
            target.width,
            target.height,
            cam.width(),
            cam.height()
        )));
    }
    let scene = &model.scene;
    let n = scene.len();
    let gaussians = scene.realize()?;
    let frames = scene.triangle_frames()?;
    let background = Vector3::new(config.background[0], config.background[1], config.background[2]);

    let base_colors: Vec<Vector3<f64>> = scene.colors.iter().map(|c| clamp_color(*c)).collect();

    // Offset branch.
    let (offsets, mlp_inputs, hidden) = if include_offsets {
        let e_view = model.embeddings.get(view_id)?;
        let input_colors = mlp_input_colors.unwrap_or(&scene.colors);
        if input_colors.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} pinned input colors for {n} gaussians",
                input_colors.len()
            )));
        }
        let x = model.mlp_inputs(e_view, input_colors);
        let (out, hidden) = model.mlp.forward_batch(&x)?;
        (Some(out), Some(x), Some(hidden))
    } else {
        (None, None, None)
    };

    let combined_colors: Option<Vec<Vector3<f64>>> = offsets.as_ref().map(|off| {
        scene
            .colors
            .iter()
            .enumerate()
            .map(|(j, c)| clamp_color(c + offset_col(off, j)))
            .collect()
    });

    // Renders. With the offset branch off (or exactly zero) the combined
    // image is the base image and one render serves both.
    let render_base = render_with_colors(&gaussians, Some(&base_colors), cam, background)?;
    let zero_offsets = offsets
        .as_ref()
        .map(|o| o.iter().all(|&v| v == 0.0))
        .unwrap_or(true);
    let render_combined = if zero_offsets {
        None
    } else {
        Some(render_with_colors(
            &gaussians,
            Some(combined_colors.as_ref().expect("offsets imply colors")),
            cam,
            background,
        )?)
    };
    let combined_img = render_combined
        .as_ref()
        .map(|r| &r.color)
        .unwrap_or(&render_base.color);

    // Pixel loss on the combined render.
    let (l1_value, l1_grad) = l1_with_grad(combined_img, target)?;
    let (ssim_value, ssim_grad) = ssim_with_grad(combined_img, target)?;
    let l_pixel = config.lambda_l1 * l1_value + config.lambda_ssim * (1.0 - ssim_value);
    let mut upstream_combined = Image::new(target.width, target.height);
    for i in 0..upstream_combined.data.len() {
        upstream_combined.data[i] =
            config.lambda_l1 * l1_grad.data[i] - config.lambda_ssim * ssim_grad.data[i];
    }

    // Structural loss on the base render.
    let (p_value, p_grad) = perceptual.loss_with_grad(&render_base.color, target)?;
    let l_struc = config.lambda_perceptual * p_value;
    let mut upstream_base = Image::new(target.width, target.height);
    for i in 0..upstream_base.data.len() {
        upstream_base.data[i] = config.lambda_perceptual * p_grad.data[i];
    }

    // Offset penalty.
    let (l_reg, mean_abs_offset) = match offsets.as_ref() {
        Some(off) => {
            let mean = off.iter().map(|v| v.abs()).sum::<f64>() / off.len().max(1) as f64;
            (config.lambda_offset * mean, mean)
        }
        None => (0.0, 0.0),
    };

    // Backward through the rasterizer.
    let grads_combined = match render_combined.as_ref() {
        Some(_) => render_backward_with_colors(
            &gaussians,
            Some(combined_colors.as_ref().expect("offsets imply colors")),
            cam,
            background,
            &upstream_combined,
        )?,
        // Shared render: combined == base, colors too.
        None => render_backward_with_colors(
            &gaussians,
            Some(&base_colors),
            cam,
            background,
            &upstream_combined,
        )?,
    };
    let grads_base = render_backward_with_colors(
        &gaussians,
        Some(&base_colors),
        cam,
        background,
        &upstream_base,
    )?;

    // Geometry gradients flow from both renders; chain through the binding.
    let mut d_local_position = vec![Vector3::zeros(); n];
    let mut d_local_rotation = vec![[0.0; 4]; n];
    let mut d_relative_log_scale = vec![Vector3::zeros(); n];
    let mut d_logit_opacity = vec![0.0; n];
    for i in 0..n {
        let d_pos = grads_combined.d_position[i] + grads_base.d_position[i];
        let d_rot = add_quat(&grads_combined.d_rotation[i], &grads_base.d_rotation[i]);
        let d_ls = grads_combined.d_log_scale[i] + grads_base.d_log_scale[i];
        let frame = &frames[scene.bindings[i].tri_index];
        let (dlp, dlr, drls) = realize_pose_backward(frame, &d_pos, &d_rot, &d_ls);
        d_local_position[i] = dlp;
        d_local_rotation[i] = dlr;
        d_relative_log_scale[i] = drls;
        d_logit_opacity[i] = grads_combined.d_logit_opacity[i] + grads_base.d_logit_opacity[i];
    }

    // Color gradients: both renders reach the base colors through their
    // clamps; the combined render also reaches the offsets.
    let mut d_color = vec![Vector3::zeros(); n];
    let mut d_offsets = offsets
        .as_ref()
        .map(|off| DMatrix::zeros(off.nrows(), off.ncols()));
    for j in 0..n {
        let c = scene.colors[j];
        for ch in 0..3 {
            let base_mask = clamp_mask(c[ch]);
            d_color[j][ch] += grads_base.d_color[j][ch] * base_mask;
            match (offsets.as_ref(), d_offsets.as_mut()) {
                (Some(off), Some(d_off)) => {
                    let pre = c[ch] + off[(ch, j)];
                    let mask = clamp_mask(pre);
                    d_color[j][ch] += grads_combined.d_color[j][ch] * mask;
                    d_off[(ch, j)] = grads_combined.d_color[j][ch] * mask;
                }
                _ => {
                    d_color[j][ch] += grads_combined.d_color[j][ch] * base_mask;
                }
            }
        }
    }

    // Offset penalty gradient and the network backward.
    let (d_mlp, d_e_view) = match (offsets.as_ref(), d_offsets.as_mut()) {
        (Some(off), Some(d_off)) => {
            let reg_scale = config.lambda_offset / off.len().max(1) as f64;
            for (d, o) in d_off.iter_mut().zip(off.iter()) {
                *d += reg_scale * loss::sign(*o);
            }
            let (grads, d_inputs) = model.mlp.backward_batch(
                mlp_inputs.as_ref().expect("inputs cached"),
                hidden.as_ref().expect("hidden cached"),
                d_off,
            )?;
            // Only the embedding rows flow back; the color block is a
            // constant input and the position encodings are fixed.
            let d = model.embeddings.dim;
            let mut d_e_view = DVector::zeros(d);
            for j in 0..d_inputs.ncols() {
                for i in 0..d {
                    d_e_view[i] += d_inputs[(i, j)];
                }
            }
            (grads, d_e_view)
        }
        _ => (
            MlpGrads::zeros_like(&model.mlp),
            DVector::zeros(model.embeddings.dim),
        ),
    };

    let psnr_consistent = psnr(&render_base.color, target)?;
    let psnr_combined = match render_combined.as_ref() {
        Some(r) => psnr(&r.color, target)?,
        None => psnr_consistent,
    };

    let values = CoinLossValues {
        l_pixel,
        l_struc,
        l_reg,
        mean_abs_offset,
        psnr_consistent,
        psnr_combined,
    };
    let grads = CoinLossGrads {
        d_local_position,
        d_local_rotation,
        d_relative_log_scale,
        d_logit_opacity,
        d_color,
        d_mlp,
        d_e_view,
    };
    Ok((values, grads))
}

/// Phase-1 style evaluation: pixel losses on the base render only, no
/// offset branch, no structural term.
pub fn base_losses(
    model: &CoinModel,
    cam: &Camera,
    target: &Image,
    config: &TrainConfig,
) -> Result<(CoinLossValues, CoinLossGrads)> {
    let scene = &model.scene;
    let n = scene.len();
    let gaussians = scene.realize()?;
    let frames = scene.triangle_frames()?;
    let background = Vector3::new(config.background[0], config.background[1], config.background[2]);
    let base_colors: Vec<Vector3<f64>> = scene.colors.iter().map(|c| clamp_color(*c)).collect();

    let render_base = render_with_colors(&gaussians, Some(&base_colors), cam, background)?;
    let (l1_value, l1_grad) = l1_with_grad(&render_base.color, target)?;
    let (ssim_value, ssim_grad) = ssim_with_grad(&render_base.color, target)?;
    let l_pixel = config.lambda_l1 * l1_value + config.lambda_ssim * (1.0 - ssim_value);
    let mut upstream = Image::new(target.width, target.height);
    for i in 0..upstream.data.len() {
        upstream.data[i] =
            config.lambda_l1 * l1_grad.data[i] - config.lambda_ssim * ssim_grad.data[i];
    }
    let gb = render_backward_with_colors(&gaussians, Some(&base_colors), cam, background, &upstream)?;

    let mut grads = CoinLossGrads {
        d_local_position: vec![Vector3::zeros(); n],
        d_local_rotation: vec![[0.0; 4]; n],
        d_relative_log_scale: vec![Vector3::zeros(); n],
        d_logit_opacity: vec![0.0; n],
        d_color: vec![Vector3::zeros(); n],
        d_mlp: MlpGrads::zeros_like(&model.mlp),
        d_e_view: DVector::zeros(model.embeddings.dim),
    };
    for i in 0..n {
        let frame = &frames[scene.bindings[i].tri_index];
        let (dlp, dlr, drls) = realize_pose_backward(
            frame,
            &gb.d_position[i],
            &gb.d_rotation[i],
            &gb.d_log_scale[i],
        );
        grads.d_local_position[i] = dlp;
        grads.d_local_rotation[i] = dlr;
        grads.d_relative_log_scale[i] = drls;
        grads.d_logit_opacity[i] = gb.d_logit_opacity[i];
        for ch in 0..3 {
            grads.d_color[i][ch] = gb.d_color[i][ch] * clamp_mask(scene.colors[i][ch]);
        }
    }

    let psnr_value = psnr(&render_base.color, target)?;
    let values = CoinLossValues {
        l_pixel,
        l_struc: 0.0,
        l_reg: 0.0,
        mean_abs_offset: 0.0,
        psnr_consistent: psnr_value,
        psnr_combined: psnr_value,
    };
    Ok((values, grads))
}

fn add_quat(a: &Quat, b: &Quat) -> Quat {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

/// Default perceptual loss instance.
pub fn default_perceptual() -> PyramidPerceptual {
    PyramidPerceptual::default()
}
