//! Two-layer color-offset network.
//!
//! Input is the concatenation `[e_view, c, e_g]`; the output is an
//! unbounded RGB offset. The final layer starts at zero so a fresh model
//! produces exactly zero offsets everywhere.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InconsistencyMlp {
    /// hidden x input.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// 3 x hidden.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Gradients with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &InconsistencyMlp) -> Self {
        Self {
            w1: DMatrix::zeros(mlp.w1.nrows(), mlp.w1.ncols()),
            b1: DVector::zeros(mlp.b1.len()),
            w2: DMatrix::zeros(mlp.w2.nrows(), mlp.w2.ncols()),
            b2: DVector::zeros(mlp.b2.len()),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

impl InconsistencyMlp {
    /// Xavier-uniform first layer, zero second layer and biases.
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden_dim, input_dim, |_, _| rng.random_range(-bound..bound));
        Self {
            w1,
            b1: DVector::zeros(hidden_dim),
            w2: DMatrix::zeros(3, hidden_dim),
            b2: DVector::zeros(3),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "mlp expects input dimension {}, got {dim}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batch forward over column-per-sample inputs. Returns the offsets
    /// (3 x N) and the hidden activations (tanh outputs) needed by the
    /// backward pass.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(inputs.nrows())?;
        let mut hidden = &self.w1 * inputs;
        for j in 0..hidden.ncols() {
            for i in 0..hidden.nrows() {
                hidden[(i, j)] = (hidden[(i, j)] + self.b1[i]).tanh();
            }
        }
        let mut out = &self.w2 * &hidden;
        for j in 0..out.ncols() {
            for i in 0..3 {
                out[(i, j)] += self.b2[i];
            }
        }
        Ok((out, hidden))
    }

    /// Backward for a batch: returns parameter gradients and the gradient
    /// with respect to the inputs (input-dim x N).
    pub fn backward_batch(
        &self,
        inputs: &DMatrix<f64>,
        hidden: &DMatrix<f64>,
        d_out: &DMatrix<f64>,
    ) -> Result<(MlpGrads, DMatrix<f64>)> {
        self.check_input(inputs.nrows())?;
        let d_w2 = d_out * hidden.transpose();
        let d_b2 = DVector::from_fn(3, |i, _| d_out.row(i).sum());
        let mut d_hidden = self.w2.transpose() * d_out;
        // tanh' = 1 - tanh^2
        for j in 0..d_hidden.ncols() {
            for i in 0..d_hidden.nrows() {
                let t = hidden[(i, j)];
                d_hidden[(i, j)] *= 1.0 - t * t;
            }
        }
        let d_w1 = &d_hidden * inputs.transpose();
        let d_b1 = DVector::from_fn(self.hidden_dim(), |i, _| d_hidden.row(i).sum());
        let d_inputs = self.w1.transpose() * d_hidden;
        Ok((
            MlpGrads {
                w1: d_w1,
                b1: d_b1,
                w2: d_w2,
                b2: d_b2,
            },
            d_inputs,
        ))
    }

    /// Single-sample color offset for `[e_view, c, e_g]`.
    pub fn color_offset(&self, e_view: &[f64], c: &Vector3<f64>, e_g: &[f64]) -> Result<Vector3<f64>> {
        let dim = e_view.len() + 3 + e_g.len();
        self.check_input(dim)?;
        let mut input = DMatrix::zeros(dim, 1);
        for (i, v) in e_view.iter().chain([c.x, c.y, c.z].iter()).chain(e_g.iter()).enumerate() {
            input[(i, 0)] = *v;
        }
        let (out, _) = self.forward_batch(&input)?;
        Ok(Vector3::new(out[(0, 0)], out[(1, 0)], out[(2, 0)]))
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }
}
