//! Triangle meshes with linear blendshape deformation.
//!
//! Deformed vertices are `base + sum_b weight_b * basis_b`. The OBJ loader
//! accepts the v/f subset with triangulated faces; blendshapes are extra OBJ
//! files with identical topology, stored as offsets from the base mesh.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Per-blendshape vertex offsets, each the same length as `vertices`.
    pub blendshapes: Vec<Vec<Vector3<f64>>>,
    pub weights: Vec<f64>,
}

impl ParametricMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::Config(format!(
                        "face {i} references vertex {v}, mesh has {}",
                        vertices.len()
                    )));
                }
            }
        }
        Ok(Self {
            vertices,
            faces,
            blendshapes: Vec::new(),
            weights: Vec::new(),
        })
    }

    pub fn add_blendshape(&mut self, offsets: Vec<Vector3<f64>>) -> Result<()> {
        if offsets.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "blendshape has {} offsets, mesh has {} vertices",
                offsets.len(),
                self.vertices.len()
            )));
        }
        self.blendshapes.push(offsets);
        self.weights.push(0.0);
        Ok(())
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.blendshapes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} blendshapes",
                weights.len(),
                self.blendshapes.len()
            )));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    /// Deformed vertex positions under the current weights.
    pub fn deformed_vertices(&self) -> Vec<Vector3<f64>> {
        let mut out = self.vertices.clone();
        for (basis, &w) in self.blendshapes.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (v, offset) in out.iter_mut().zip(basis) {
                *v += w * offset;
            }
        }
        out
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Applies a rigid transform to the base vertices and blendshape bases.
    pub fn rigidly_transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * v + translation)
                .collect(),
            faces: self.faces.clone(),
            blendshapes: self
                .blendshapes
                .iter()
                .map(|basis| basis.iter().map(|o| rotation * o).collect())
                .collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn from_obj_str(text: &str, origin: &Path) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(origin, format!("line {}: {e}", ln + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::parse(
                            origin,
                            format!("line {}: vertex needs 3 coordinates", ln + 1),
                        ));
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    // Accept "f 1 2 3" and "f 1/1/1 2/2/2 3/3/3"; indices are 1-based.
                    let idx: Vec<usize> = parts
                        .map(|t| {
                            t.split('/')
                                .next()
                                .unwrap_or("")
                                .parse::<usize>()
                                .map_err(|e| {
                                    Error::parse(origin, format!("line {}: {e}", ln + 1))
                                })
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::parse(
                            origin,
                            format!("line {}: only triangulated faces are supported", ln + 1),
                        ));
                    }
                    if idx.iter().any(|&i| i == 0) {
                        return Err(Error::parse(
                            origin,
                            format!("line {}: OBJ face indices are 1-based", ln + 1),
                        ));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {} // comments, vt/vn, empty lines
            }
        }
        ParametricMesh::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj_str(&text, path)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    /// Loads a blendshape from an OBJ with identical topology; the stored
    /// basis is the per-vertex offset from this mesh's base vertices.
    pub fn add_blendshape_obj(&mut self, path: &Path) -> Result<()> {
        let shape = Self::load_obj(path)?;
        if shape.vertices.len() != self.vertices.len() || shape.faces != self.faces {
            return Err(Error::parse(path, "blendshape topology differs from base mesh"));
        }
        let offsets = shape
            .vertices
            .iter()
            .zip(&self.vertices)
            .map(|(s, b)| s - b)
            .collect();
        self.add_blendshape(offsets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_mesh() -> ParametricMesh {
        ParametricMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn obj_round_trip() {
        let mesh = quad_mesh();
        let text = mesh.to_obj();
        let back = ParametricMesh::from_obj_str(&text, Path::new("test.obj")).unwrap();
        assert_eq!(mesh.vertices, back.vertices);
        assert_eq!(mesh.faces, back.faces);
    }

    #[test]
    fn blendshape_deforms_linearly() {
        let mut mesh = quad_mesh();
        let basis = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::zeros(),
        ];
        mesh.add_blendshape(basis).unwrap();
        mesh.set_weights(&[0.5]).unwrap();
        let v = mesh.deformed_vertices();
        assert_eq!(v[0], Vector3::new(0.0, 0.0, 0.5));
        assert_eq!(v[1], mesh.vertices[1]);
    }

    #[test]
    fn face_index_out_of_range_rejected() {
        let got = ParametricMesh::new(vec![Vector3::zeros()], vec![[0, 0, 5]]);
        assert!(got.is_err());
    }

    #[test]
    fn obj_with_slash_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n";
        let mesh = ParametricMesh::from_obj_str(text, Path::new("t.obj")).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }
}
