//! Mesh-bound 3D Gaussian splatting with split consistent/inconsistent
//! training for unreliable multi-view data.
//!
//! The crate provides:
//! - a pinhole [`camera`] model with orbit-camera generation,
//! - [`scene`]: 3D Gaussians rigged to a blendshape [`mesh`],
//! - a differentiable CPU tile [`render`]er (forward + analytic backward),
//! - [`warp`]: depth-guided cross-view warping with occlusion masks,
//! - [`coin`]: joint training of a consistent base model and a per-view
//!   color-offset network that soaks up view-specific inconsistencies,
//! - [`synth`]: synthetic multi-view bundles with controlled perturbations,
//!   used as ground-truth oracles for the training pipeline.

pub mod camera;
pub mod coin;
pub mod dataset;
pub mod error;
pub mod image;
pub mod io;
pub mod mesh;
pub mod quat;
pub mod render;
pub mod scene;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
