//! Binary model checkpoints.
//!
//! Layout (all little-endian, documented in `docs/FORMATS.md`): an 8-byte
//! magic `COINSPLT`, a version byte, the mesh-bound scene arrays, the
//! offset-network and embedding arrays, and optionally the optimizer state
//! needed to resume training mid-run.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::coin::{optim::Adam, CoinModel, InconsistencyMlp, ViewEmbeddingTable};
use crate::error::{Error, Result};
use crate::mesh::ParametricMesh;
use crate::scene::{GaussianScene, TriangleBinding};

pub const MAGIC: &[u8; 8] = b"COINSPLT";
pub const VERSION: u8 = 1;

/// Optimizer state for resuming; groups are stored in a fixed order:
/// position, rotation, scale, opacity, color, network, embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub iteration: u64,
    pub groups: Vec<Adam>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: CoinModel,
    pub optimizer: Option<OptimizerState>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
    fn vec3s(&mut self, vs: &[Vector3<f64>]) {
        for v in vs {
            self.f64(v.x);
            self.f64(v.y);
            self.f64(v.z);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bail<T>(&self, msg: &str) -> Result<T> {
        Err(Error::parse(self.path, msg))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(self.path, "checkpoint truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::parse(self.path, "count overflows usize"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn vec3s(&mut self, n: usize) -> Result<Vec<Vector3<f64>>> {
        let flat = self.f64s(n * 3)?;
        Ok(flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect())
    }
}

fn write_matrix(w: &mut Writer, m: &DMatrix<f64>) {
    w.u64(m.nrows() as u64);
    w.u64(m.ncols() as u64);
    // Column-major, nalgebra's storage order.
    w.f64s(m.as_slice());
}

fn read_matrix(r: &mut Reader) -> Result<DMatrix<f64>> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let data = r.f64s(rows * cols)?;
    Ok(DMatrix::from_column_slice(rows, cols, &data))
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(VERSION);

    // Mesh.
    let mesh = &ckpt.model.scene.mesh;
    w.u64(mesh.vertices.len() as u64);
    w.u64(mesh.faces.len() as u64);
    w.u64(mesh.blendshapes.len() as u64);
    w.vec3s(&mesh.vertices);
    for f in &mesh.faces {
        w.u64(f[0] as u64);
        w.u64(f[1] as u64);
        w.u64(f[2] as u64);
    }
    for basis in &mesh.blendshapes {
        w.vec3s(basis);
    }
    w.f64s(&mesh.weights);

    // Gaussians.
    let scene = &ckpt.model.scene;
    let n = scene.len();
    w.u64(n as u64);
    for b in &scene.bindings {
        w.u64(b.tri_index as u64);
    }
    for b in &scene.bindings {
        w.f64(b.local_position.x);
        w.f64(b.local_position.y);
        w.f64(b.local_position.z);
    }
    for b in &scene.bindings {
        w.f64s(&b.local_rotation);
    }
    for b in &scene.bindings {
        w.f64(b.relative_log_scale.x);
        w.f64(b.relative_log_scale.y);
        w.f64(b.relative_log_scale.z);
    }
    w.f64s(&scene.logit_opacities);
    w.vec3s(&scene.colors);

    // Offset network, embeddings, position encodings.
    let model = &ckpt.model;
    w.u64(model.reference_view as u64);
    w.u64(model.position_frequencies as u64);
    write_matrix(&mut w, &model.mlp.w1);
    w.u64(model.mlp.b1.len() as u64);
    w.f64s(model.mlp.b1.iter());
    write_matrix(&mut w, &model.mlp.w2);
    w.u64(model.mlp.b2.len() as u64);
    w.f64s(model.mlp.b2.iter());
    w.u64(model.embeddings.n_views() as u64);
    w.u64(model.embeddings.dim as u64);
    for e in &model.embeddings.embeddings {
        w.f64s(e.iter());
    }
    write_matrix(&mut w, &model.e_g);

    // Optimizer state.
    match &ckpt.optimizer {
        None => w.u8(0),
        Some(state) => {
            w.u8(1);
            w.u64(state.iteration);
            w.u64(state.groups.len() as u64);
            for g in &state.groups {
                w.u64(g.step);
                w.u64(g.m.len() as u64);
                w.f64s(&g.m);
                w.f64s(&g.v);
            }
        }
    }
    w.buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return r.bail("not a checkpoint (bad magic)");
    }
    let version = r.u8()?;
    if version != VERSION {
        return r.bail(&format!("unsupported checkpoint version {version}"));
    }

    // Mesh.
    let n_vertices = r.usize()?;
    let n_faces = r.usize()?;
    let n_shapes = r.usize()?;
    let vertices = r.vec3s(n_vertices)?;
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        faces.push([r.usize()?, r.usize()?, r.usize()?]);
    }
    let mut mesh = ParametricMesh::new(vertices, faces)?;
    for _ in 0..n_shapes {
        mesh.add_blendshape(r.vec3s(n_vertices)?)?;
    }
    let weights = r.f64s(n_shapes)?;
    mesh.set_weights(&weights)?;

    // Gaussians.
    let n = r.usize()?;
    let mut tri = Vec::with_capacity(n);
    for _ in 0..n {
        tri.push(r.usize()?);
    }
    let local_positions = r.vec3s(n)?;
    let mut local_rotations = Vec::with_capacity(n);
    for _ in 0..n {
        let q = r.f64s(4)?;
        local_rotations.push([q[0], q[1], q[2], q[3]]);
    }
    let rel_scales = r.vec3s(n)?;
    let logit_opacities = r.f64s(n)?;
    let colors = r.vec3s(n)?;
    let bindings: Vec<TriangleBinding> = (0..n)
        .map(|i| TriangleBinding {
            tri_index: tri[i],
            local_position: local_positions[i],
            local_rotation: local_rotations[i],
            relative_log_scale: rel_scales[i],
        })
        .collect();
    for b in &bindings {
        if b.tri_index >= mesh.faces.len() {
            return r.bail("binding references a missing face");
        }
    }
    let scene = GaussianScene {
        mesh,
        bindings,
        colors,
        logit_opacities,
    };

    // Offset network.
    let reference_view = r.usize()?;
    let position_frequencies = r.usize()?;
    let w1 = read_matrix(&mut r)?;
    let b1_len = r.usize()?;
    let b1 = DVector::from_vec(r.f64s(b1_len)?);
    let w2 = read_matrix(&mut r)?;
    let b2_len = r.usize()?;
    let b2 = DVector::from_vec(r.f64s(b2_len)?);
    let n_views = r.usize()?;
    let dim = r.usize()?;
    let mut embeddings = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        embeddings.push(DVector::from_vec(r.f64s(dim)?));
    }
    let e_g = read_matrix(&mut r)?;

    let model = CoinModel {
        scene,
        mlp: InconsistencyMlp { w1, b1, w2, b2 },
        embeddings: ViewEmbeddingTable { dim, embeddings },
        e_g,
        position_frequencies,
        reference_view,
    };

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let iteration = r.u64()?;
            let n_groups = r.usize()?;
            let mut groups = Vec::with_capacity(n_groups);
            for _ in 0..n_groups {
                let step = r.u64()?;
                let len = r.usize()?;
                let m = r.f64s(len)?;
                let v = r.f64s(len)?;
                let mut adam = Adam::new(len);
                adam.step = step;
                adam.m = m;
                adam.v = v;
                groups.push(adam);
            }
            Some(OptimizerState { iteration, groups })
        }
        other => return r.bail(&format!("bad optimizer flag {other}")),
    };

    if r.pos != bytes.len() {
        return r.bail("trailing bytes after checkpoint");
    }
    Ok(Checkpoint { model, optimizer })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
