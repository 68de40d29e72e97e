//! Two-phase optimization loop.
//!
//! Phase 1 fits the base model alone with pixel losses on its own render;
//! phase 2 turns on the offset branch and the full split-loss objective.
//! One view is visited per iteration, round-robin, so a fixed seed and
//! thread count reproduce runs bit-for-bit.

use nalgebra::Vector3;

use crate::dataset::ViewDataset;
use crate::error::{Error, Result};
use crate::io::checkpoint::OptimizerState;
use crate::quat;
use crate::scene::GaussianScene;

use super::loss::PerceptualLoss;
use super::optim::{decayed_lr, Adam};
use super::{base_losses, coin_losses, CoinLossGrads, CoinModel, LossReport, TrainConfig};

const N_GROUPS: usize = 7;

pub struct Trainer {
    pub model: CoinModel,
    pub config: TrainConfig,
    pub iteration: u64,
    optimizers: Vec<Adam>,
    perceptual: Box<dyn PerceptualLoss>,
}

impl Trainer {
    pub fn new(scene: GaussianScene, dataset: &ViewDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate_for_training()?;
        let model = CoinModel::init(scene, dataset.n_views(), dataset.reference_view, &config)?;
        let optimizers = Self::fresh_optimizers(&model);
        Ok(Self {
            model,
            config,
            iteration: 0,
            optimizers,
            perceptual: Box::new(super::default_perceptual()),
        })
    }

    /// Resumes from checkpointed model and optimizer state.
    pub fn resume(
        model: CoinModel,
        state: OptimizerState,
        dataset: &ViewDataset,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        dataset.validate_for_training()?;
        if dataset.n_views() != model.embeddings.n_views() {
            return Err(Error::Config(format!(
                "checkpoint has {} view embeddings, dataset has {} views",
                model.embeddings.n_views(),
                dataset.n_views()
            )));
        }
        let expected = Self::group_sizes(&model);
        if state.groups.len() != N_GROUPS
            || state
                .groups
                .iter()
                .zip(&expected)
                .any(|(g, &n)| g.m.len() != n)
        {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        Ok(Self {
            iteration: state.iteration,
            optimizers: state.groups,
            model,
            config,
            perceptual: Box::new(super::default_perceptual()),
        })
    }

    pub fn with_perceptual(mut self, loss: Box<dyn PerceptualLoss>) -> Self {
        self.perceptual = loss;
        self
    }

    fn group_sizes(model: &CoinModel) -> [usize; N_GROUPS] {
        let n = model.gaussian_count();
        let mlp = &model.mlp;
        [
            3 * n,
            4 * n,
            3 * n,
            n,
            3 * n,
            mlp.w1.len() + mlp.b1.len() + mlp.w2.len() + mlp.b2.len(),
            model.embeddings.n_views() * model.embeddings.dim,
        ]
    }

    fn fresh_optimizers(model: &CoinModel) -> Vec<Adam> {
        Self::group_sizes(model).iter().map(|&n| Adam::new(n)).collect()
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            iteration: self.iteration,
            groups: self.optimizers.clone(),
        }
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.total_iters()
    }

    /// Current phase: 1 while the base model trains alone, 2 afterwards.
    pub fn phase(&self) -> u8 {
        if self.iteration < self.config.phase1_iters {
            1
        } else {
            2
        }
    }

    /// Runs one iteration (one view) and returns its loss report.
    pub fn step(&mut self, dataset: &ViewDataset) -> Result<LossReport> {
        let view_idx = (self.iteration % dataset.n_views() as u64) as usize;
        let view = &dataset.views[view_idx];
        let phase = self.phase();

        let (values, grads) = if phase == 1 {
            base_losses(&self.model, &view.camera, &view.image, &self.config)?
        } else {
            coin_losses(
                &self.model,
                view.id,
                &view.camera,
                &view.image,
                &self.config,
                self.perceptual.as_ref(),
                true,
                None,
            )?
        };

        let report = LossReport {
            iteration: self.iteration,
            phase,
            l_pixel: values.l_pixel,
            l_struc: values.l_struc,
            l_reg: values.l_reg,
            total: values.total(),
            mean_abs_offset: values.mean_abs_offset,
            psnr_consistent: values.psnr_consistent,
            psnr_combined: values.psnr_combined,
        };
        report.check_finite(self.iteration)?;

        self.apply_gradients(&grads, view.id, phase)?;
        self.iteration += 1;
        Ok(report)
    }

    fn position_lr(&self, phase: u8) -> f64 {
        let (t, span) = if phase == 1 {
            (self.iteration, self.config.phase1_iters)
        } else {
            (
                self.iteration - self.config.phase1_iters,
                self.config.phase2_iters,
            )
        };
        decayed_lr(self.config.lr_position, t, span)
    }

    fn apply_gradients(&mut self, grads: &CoinLossGrads, view_id: usize, phase: u8) -> Result<()> {
        let n = self.model.gaussian_count();
        let position_lr = self.position_lr(phase);
        let scene = &mut self.model.scene;

        // Geometry and appearance groups.
        let mut flat = Vec::with_capacity(4 * n);
        let mut gflat = Vec::with_capacity(4 * n);

        flat.clear();
        gflat.clear();
        for (b, g) in scene.bindings.iter().zip(&grads.d_local_position) {
            flat.extend_from_slice(b.local_position.as_slice());
            gflat.extend_from_slice(g.as_slice());
        }
        self.optimizers[0].step(&mut flat, &gflat, position_lr);
        for (i, b) in scene.bindings.iter_mut().enumerate() {
            b.local_position = Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        }

        flat.clear();
        gflat.clear();
        for (b, g) in scene.bindings.iter().zip(&grads.d_local_rotation) {
            flat.extend_from_slice(&b.local_rotation);
            gflat.extend_from_slice(g);
        }
        self.optimizers[1].step(&mut flat, &gflat, self.config.lr_rotation);
        for (i, b) in scene.bindings.iter_mut().enumerate() {
            // Renormalize after every step.
            b.local_rotation = quat::normalize(&[
                flat[4 * i],
                flat[4 * i + 1],
                flat[4 * i + 2],
                flat[4 * i + 3],
            ]);
        }

        flat.clear();
        gflat.clear();
        for (b, g) in scene.bindings.iter().zip(&grads.d_relative_log_scale) {
            flat.extend_from_slice(b.relative_log_scale.as_slice());
            gflat.extend_from_slice(g.as_slice());
        }
        self.optimizers[2].step(&mut flat, &gflat, self.config.lr_scale);
        for (i, b) in scene.bindings.iter_mut().enumerate() {
            b.relative_log_scale = Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        }

        self.optimizers[3].step(
            &mut scene.logit_opacities,
            &grads.d_logit_opacity,
            self.config.lr_opacity,
        );

        flat.clear();
        gflat.clear();
        for (c, g) in scene.colors.iter().zip(&grads.d_color) {
            flat.extend_from_slice(c.as_slice());
            gflat.extend_from_slice(g.as_slice());
        }
        self.optimizers[4].step(&mut flat, &gflat, self.config.lr_color);
        for (i, c) in scene.colors.iter_mut().enumerate() {
            // Colors live in [0, 1]; project after the step.
            *c = Vector3::new(
                flat[3 * i].clamp(0.0, 1.0),
                flat[3 * i + 1].clamp(0.0, 1.0),
                flat[3 * i + 2].clamp(0.0, 1.0),
            );
        }

        // The offset branch only moves in phase 2.
        if phase == 2 {
            let mlp = &mut self.model.mlp;
            flat.clear();
            gflat.clear();
            flat.extend(mlp.w1.iter());
            flat.extend(mlp.b1.iter());
            flat.extend(mlp.w2.iter());
            flat.extend(mlp.b2.iter());
            gflat.extend(grads.d_mlp.w1.iter());
            gflat.extend(grads.d_mlp.b1.iter());
            gflat.extend(grads.d_mlp.w2.iter());
            gflat.extend(grads.d_mlp.b2.iter());
            self.optimizers[5].step(&mut flat, &gflat, self.config.lr_mlp);
            let mut it = flat.iter();
            for v in mlp.w1.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in mlp.b1.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in mlp.w2.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in mlp.b2.iter_mut() {
                *v = *it.next().unwrap();
            }

            // Embeddings: only the visited view has nonzero gradient, but
            // Adam momentum applies to the whole table, so step the full
            // group with a sparse gradient vector.
            let dim = self.model.embeddings.dim;
            flat.clear();
            gflat.clear();
            for (vi, e) in self.model.embeddings.embeddings.iter().enumerate() {
                flat.extend(e.iter());
                if vi == view_id {
                    gflat.extend(grads.d_e_view.iter());
                } else {
                    gflat.extend(std::iter::repeat_n(0.0, dim));
                }
            }
            self.optimizers[6].step(&mut flat, &gflat, self.config.lr_mlp);
            for (vi, e) in self.model.embeddings.embeddings.iter_mut().enumerate() {
                for (i, v) in e.iter_mut().enumerate() {
                    *v = flat[vi * dim + i];
                }
            }
            if !self.model.mlp.is_finite() || !self.model.embeddings.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("offset branch parameters at iteration {}", self.iteration),
                });
            }
        }
        Ok(())
    }

    /// Runs to completion, invoking the callback on every logged report.
    pub fn run(
        &mut self,
        dataset: &ViewDataset,
        mut on_report: impl FnMut(&LossReport) -> Result<()>,
    ) -> Result<()> {
        let total = self.config.total_iters();
        while self.iteration < total {
            let report = self.step(dataset)?;
            if should_log(report.iteration, total, self.config.log_interval) {
                on_report(&report)?;
            }
        }
        Ok(())
    }
}

/// Logging cadence: every `interval`-th iteration plus the final one.
pub fn should_log(iteration: u64, total: u64, interval: u64) -> bool {
    let interval = interval.max(1);
    (iteration + 1) % interval == 0 || iteration + 1 == total
}

pub fn logged_row_count(total: u64, interval: u64) -> u64 {
    (0..total).filter(|&i| should_log(i, total, interval)).count() as u64
}

/// Trains a fresh model on the dataset and returns it with the logged loss
/// history.
pub fn train(
    scene: GaussianScene,
    dataset: &ViewDataset,
    config: TrainConfig,
) -> Result<(CoinModel, Vec<LossReport>)> {
    let mut trainer = Trainer::new(scene, dataset, config)?;
    let mut history = Vec::new();
    trainer.run(dataset, |r| {
        history.push(r.clone());
        Ok(())
    })?;
    let Trainer { model, .. } = trainer;
    Ok((model, history))
}
