//! Canonical 3D Gaussians and their binding to a deformable triangle mesh.
//!
//! Each Gaussian lives in the local frame of a host triangle: deforming the
//! mesh re-poses every bound Gaussian through [`realize`], so one set of
//! canonical parameters can be rendered under any mesh state.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::ParametricMesh;
use crate::quat::{self, Quat};

/// A single 3D Gaussian in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    /// Unit quaternion `[w, x, y, z]`; renormalized after every optimizer step.
    pub rotation: Quat,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vector3<f64>,
    pub logit_opacity: f64,
    /// Base color in [0, 1].
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = quat::to_matrix(&quat::normalize(&self.rotation));
        let s2 = Matrix3::from_diagonal(&self.log_scale.map(|v| (2.0 * v).exp()));
        let cov = r * s2 * r.transpose();
        // Symmetrize bit-exactly; the analytic product is symmetric only up
        // to rounding.
        let mut out = cov;
        let avg01 = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
        let avg02 = 0.5 * (cov[(0, 2)] + cov[(2, 0)]);
        let avg12 = 0.5 * (cov[(1, 2)] + cov[(2, 1)]);
        out[(0, 1)] = avg01;
        out[(1, 0)] = avg01;
        out[(0, 2)] = avg02;
        out[(2, 0)] = avg02;
        out[(1, 2)] = avg12;
        out[(2, 1)] = avg12;
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Placement of one Gaussian in its host triangle's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleBinding {
    pub tri_index: usize,
    /// Position in the triangle frame, in units of the scale metric.
    pub local_position: Vector3<f64>,
    /// Rotation relative to the triangle frame.
    pub local_rotation: Quat,
    /// Log scale relative to `ln(scale_metric)`.
    pub relative_log_scale: Vector3<f64>,
}

/// Orthonormal frame of a triangle: rotation columns are the normalized
/// first edge, the normal, and their cross product; the anchor is the
/// centroid; the scale metric is sqrt(area).
#[derive(Debug, Clone, Copy)]
pub struct TriangleFrame {
    pub rotation: Matrix3<f64>,
    pub anchor: Vector3<f64>,
    pub scale_metric: f64,
}

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

pub fn triangle_frame(vertices: &[Vector3<f64>], face: [usize; 3], face_index: usize) -> Result<TriangleFrame> {
    let v0 = vertices[face[0]];
    let v1 = vertices[face[1]];
    let v2 = vertices[face[2]];
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let cross = e1.cross(&e2);
    let area = 0.5 * cross.norm();
    if area <= MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateTriangle {
            face: face_index,
            area,
        });
    }
    let u = e1.normalize();
    let n = cross.normalize();
    let t = u.cross(&n);
    let rotation = Matrix3::from_columns(&[u, n, t]);
    Ok(TriangleFrame {
        rotation,
        anchor: (v0 + v1 + v2) / 3.0,
        scale_metric: area.sqrt(),
    })
}

/// Maps a binding through a mesh state to the world-space Gaussian pose.
///
/// `mu = anchor + k * (F * local_position)`, `q = f ⊗ local_rotation`,
/// `log_scale = relative_log_scale + ln(k)`, with `F`/`f` the triangle frame
/// rotation and `k` its scale metric.
pub fn realize_pose(
    binding: &TriangleBinding,
    frame: &TriangleFrame,
) -> (Vector3<f64>, Quat, Vector3<f64>) {
    let position = frame.anchor + frame.scale_metric * (frame.rotation * binding.local_position);
    let frame_quat = quat::from_matrix(&frame.rotation);
    let rotation = quat::mul(&frame_quat, &binding.local_rotation);
    let ln_k = frame.scale_metric.ln();
    let log_scale = binding.relative_log_scale.add_scalar(ln_k);
    (position, rotation, log_scale)
}

/// Gradients of the rendered loss with respect to one binding's local
/// parameters, given gradients with respect to the realized pose.
pub fn realize_pose_backward(
    frame: &TriangleFrame,
    d_position: &Vector3<f64>,
    d_rotation: &Quat,
    d_log_scale: &Vector3<f64>,
) -> (Vector3<f64>, Quat, Vector3<f64>) {
    let d_local_position = frame.scale_metric * (frame.rotation.transpose() * d_position);
    let frame_quat = quat::from_matrix(&frame.rotation);
    let d_local_rotation = quat::mul_backward_rhs(&frame_quat, d_rotation);
    (d_local_position, d_local_rotation, *d_log_scale)
}

/// Analytic derivative of a realized Gaussian position with respect to one
/// blendshape weight (the mesh moves, the binding stays fixed).
pub fn realized_position_weight_jacobian(
    mesh: &ParametricMesh,
    binding: &TriangleBinding,
    weight_index: usize,
) -> Result<Vector3<f64>> {
    let vertices = mesh.deformed_vertices();
    let face = mesh.faces[binding.tri_index];
    let basis = &mesh.blendshapes[weight_index];
    let v0 = vertices[face[0]];
    let v1 = vertices[face[1]];
    let v2 = vertices[face[2]];
    let b0 = basis[face[0]];
    let b1 = basis[face[1]];
    let b2 = basis[face[2]];

    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let de1 = b1 - b0;
    let de2 = b2 - b0;
    let c = e1.cross(&e2);
    let c_norm = c.norm();
    let area = 0.5 * c_norm;
    if area <= MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateTriangle {
            face: binding.tri_index,
            area,
        });
    }
    let dc = de1.cross(&e2) + e1.cross(&de2);

    // anchor term
    let d_anchor = (b0 + b1 + b2) / 3.0;

    // scale metric k = sqrt(area), area = |c| / 2
    let k = area.sqrt();
    let d_cnorm = c.dot(&dc) / c_norm;
    let d_area = 0.5 * d_cnorm;
    let dk = d_area / (2.0 * k);

    // frame columns u = e1/|e1|, n = c/|c|, t = u x n
    let e1_norm = e1.norm();
    let u = e1 / e1_norm;
    let n = c / c_norm;
    let du = (de1 - u * u.dot(&de1)) / e1_norm;
    let dn = (dc - n * n.dot(&dc)) / c_norm;
    let t_col = u.cross(&n);
    let dt = du.cross(&n) + u.cross(&dn);

    let f = Matrix3::from_columns(&[u, n, t_col]);
    let df = Matrix3::from_columns(&[du, dn, dt]);

    let lp = binding.local_position;
    Ok(d_anchor + dk * (f * lp) + k * (df * lp))
}

/// A mesh-bound Gaussian scene: geometry lives in triangle-local frames,
/// appearance (color, opacity) is stored per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub mesh: ParametricMesh,
    pub bindings: Vec<TriangleBinding>,
    pub colors: Vec<Vector3<f64>>,
    pub logit_opacities: Vec<f64>,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// Frames of all faces under the current mesh weights. Fails on the
    /// first degenerate face, naming it.
    pub fn triangle_frames(&self) -> Result<Vec<TriangleFrame>> {
        let vertices = self.mesh.deformed_vertices();
        self.mesh
            .faces
            .iter()
            .enumerate()
            .map(|(i, &f)| triangle_frame(&vertices, f, i))
            .collect()
    }

    /// Realizes every binding into a world-space Gaussian.
    pub fn realize(&self) -> Result<Vec<Gaussian3D>> {
        let frames = self.triangle_frames()?;
        Ok(self
            .bindings
            .iter()
            .zip(self.colors.iter().zip(&self.logit_opacities))
            .map(|(binding, (&color, &logit_opacity))| {
                let (position, rotation, log_scale) =
                    realize_pose(binding, &frames[binding.tri_index]);
                Gaussian3D {
                    position,
                    rotation,
                    log_scale,
                    logit_opacity,
                    color,
                }
            })
            .collect())
    }

    /// Positions realized on the base mesh (all blendshape weights zero).
    /// These are the canonical coordinates the position embeddings use.
    pub fn canonical_positions(&self) -> Result<Vec<Vector3<f64>>> {
        let mut base = self.clone();
        let zeros = vec![0.0; base.mesh.weights.len()];
        base.mesh.set_weights(&zeros)?;
        let frames = base.triangle_frames()?;
        Ok(base
            .bindings
            .iter()
            .map(|b| realize_pose(b, &frames[b.tri_index]).0)
            .collect())
    }
}

/// Samples `n_per_face` bindings on every face: positions uniform on the
/// triangle (in the local frame, in scale-metric units), identity local
/// rotation, and a relative log scale giving a 1-sigma extent of about half
/// the scale metric.
pub fn init_on_mesh(mesh: &ParametricMesh, n_per_face: usize, seed: u64) -> Result<Vec<TriangleBinding>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = mesh.deformed_vertices();
    let mut bindings = Vec::with_capacity(mesh.faces.len() * n_per_face);
    for (i, &face) in mesh.faces.iter().enumerate() {
        let frame = triangle_frame(&vertices, face, i)?;
        let v0 = vertices[face[0]];
        for _ in 0..n_per_face {
            // Uniform barycentric sample via the reflection trick.
            let mut a: f64 = rng.random();
            let mut b: f64 = rng.random();
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            let world = v0 + a * (vertices[face[1]] - v0) + b * (vertices[face[2]] - v0);
            let local = frame.rotation.transpose() * (world - frame.anchor) / frame.scale_metric;
            bindings.push(TriangleBinding {
                tri_index: i,
                local_position: local,
                local_rotation: quat::IDENTITY,
                relative_log_scale: Vector3::from_element(0.5_f64.ln()),
            });
        }
    }
    Ok(bindings)
}
