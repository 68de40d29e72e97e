//! Fixed per-Gaussian position encodings and the learnable per-view
//! embedding table.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

/// Sinusoidal encoding of a normalized position: `[sin(2^k pi p), cos(2^k
/// pi p)]` per axis for k < L, giving 6L values. L = 0 yields an empty
/// encoding.
pub fn position_embedding(p: &Vector3<f64>, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * frequencies);
    for k in 0..frequencies {
        let f = (1u64 << k) as f64 * std::f64::consts::PI;
        for axis in 0..3 {
            out.push((f * p[axis]).sin());
        }
        for axis in 0..3 {
            out.push((f * p[axis]).cos());
        }
    }
    out
}

/// Column-per-Gaussian matrix of position embeddings.
pub fn position_embedding_matrix(
    positions: &[Vector3<f64>],
    scale: f64,
    frequencies: usize,
) -> DMatrix<f64> {
    let dim = 6 * frequencies;
    let mut m = DMatrix::zeros(dim, positions.len());
    for (j, p) in positions.iter().enumerate() {
        let e = position_embedding(&(p / scale), frequencies);
        for (i, v) in e.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// One learnable embedding per training view, indexed by view id.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEmbeddingTable {
    pub dim: usize,
    pub embeddings: Vec<DVector<f64>>,
}

impl ViewEmbeddingTable {
    /// Zero-initialized table; views differentiate through their own
    /// gradients as training proceeds.
    pub fn zeros(n_views: usize, dim: usize) -> Self {
        Self {
            dim,
            embeddings: vec![DVector::zeros(dim); n_views],
        }
    }

    pub fn n_views(&self) -> usize {
        self.embeddings.len()
    }

    pub fn get(&self, view_id: usize) -> Result<&DVector<f64>> {
        self.embeddings.get(view_id).ok_or_else(|| Error::UnknownView {
            id: view_id,
            available: (0..self.embeddings.len()).collect(),
        })
    }

    pub fn get_mut(&mut self, view_id: usize) -> Result<&mut DVector<f64>> {
        let n = self.embeddings.len();
        self.embeddings.get_mut(view_id).ok_or_else(|| Error::UnknownView {
            id: view_id,
            available: (0..n).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .all(|e| e.iter().all(|v| v.is_finite()))
    }
}
