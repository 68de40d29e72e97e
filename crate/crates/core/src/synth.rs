//! Synthetic multi-view scenes with controlled, replayable inconsistencies.
//!
//! A deformed textured sphere provides the ground-truth scene; orbit views
//! rendered from it are the clean dataset. [`inject`] then applies per-view
//! perturbations (color affine, additive blobs, small warp jitter) and
//! records the exact parameters, so experiments can compare models trained
//! on corrupted data against the unmodified ground truth.

use nalgebra::{Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_cameras_offset, Camera, Intrinsics};
use crate::dataset::{View, ViewDataset};
use crate::error::{Error, Result};
use crate::image::{Image, ScalarImage};
use crate::mesh::ParametricMesh;
use crate::render::render;
use crate::scene::{init_on_mesh, logit, GaussianScene};
use crate::warp::DepthImage;

/// Orbit radius used for synthetic captures.
pub const ORBIT_RADIUS: f64 = 2.6;
/// Rendered depth is kept where accumulated alpha reaches this value.
pub const DEPTH_VALID_ALPHA: f64 = 0.5;

/// Per-view perturbation model. All ranges are symmetric and sampled per
/// view from the seed; the reference view stays clean unless requested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InconsistencySpec {
    /// Channel gains in [1 - s, 1 + s], biases in [-s, s].
    pub color_sigma: f64,
    pub blob_count: usize,
    /// Blob radius range in pixels.
    pub blob_radius: (f64, f64),
    /// Blob amplitude magnitude range (sign is random per channel).
    pub blob_amplitude: (f64, f64),
    /// Maximum warp-field displacement in pixels.
    pub jitter: f64,
    pub seed: u64,
    pub perturb_reference: bool,
}

impl Default for InconsistencySpec {
    fn default() -> Self {
        Self {
            color_sigma: 0.0,
            blob_count: 0,
            blob_radius: (4.0, 12.0),
            blob_amplitude: (0.1, 0.25),
            jitter: 0.0,
            seed: 0,
            perturb_reference: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlobRecord {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: [f64; 3],
}

/// Low-resolution displacement grid, bilinearly upsampled over the image.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JitterField {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major (dx, dy) pairs in pixels.
    pub displacements: Vec<[f64; 2]>,
}

/// Everything needed to replay one view's perturbation bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerturbationRecord {
    pub view: usize,
    pub gains: [f64; 3],
    pub biases: [f64; 3],
    pub blobs: Vec<BlobRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<JitterField>,
}

impl PerturbationRecord {
    pub fn identity(view: usize) -> Self {
        Self {
            view,
            gains: [1.0; 3],
            biases: [0.0; 3],
            blobs: Vec::new(),
            jitter: None,
        }
    }
}

/// Clean ground truth plus the perturbed training copy and the applied
/// perturbations.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub clean: ViewDataset,
    pub perturbed: ViewDataset,
    pub records: Vec<PerturbationRecord>,
}

/// Deterministic textured scene: Gaussians bound to a blendshape-deformed
/// sphere, colored by a smooth random Fourier pattern, fitting in the unit
/// ball.
pub fn make_scene(seed: u64, n_gaussians: usize) -> Result<GaussianScene> {
    if n_gaussians < 1 {
        return Err(Error::Config("scene needs at least one gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mesh = sphere_mesh(0.7, 24, 13);
    // Two smooth deformation bases give the sphere an irregular shape.
    for shape in 0..2 {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let freq: f64 = rng.random_range(2.0..4.0);
        let basis: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|v| {
                let n = v.normalize();
                n * 0.08 * ((freq * n.dot(&dir) + phase).sin())
            })
            .collect();
        mesh.add_blendshape(basis)?;
        let _ = shape;
    }
    mesh.set_weights(&[1.0, 1.0])?;

    let per_face = n_gaussians.div_ceil(mesh.face_count());
    let all = init_on_mesh(&mesh, per_face, seed ^ 0x5eed)?;
    // Even stride selection keeps coverage when the request is not a
    // multiple of the face count.
    let total = all.len();
    let bindings: Vec<_> = (0..n_gaussians)
        .map(|i| all[i * total / n_gaussians].clone())
        .collect();

    // Smooth random color field over canonical positions.
    let mut field = Vec::new();
    for _ in 0..3 {
        let mut comps = Vec::new();
        for _ in 0..3 {
            comps.push((
                rng.random_range(0.08..0.22),
                Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                ),
                rng.random_range(0.0..std::f64::consts::TAU),
            ));
        }
        field.push(comps);
    }
    let vertices = mesh.deformed_vertices();
    let colors: Vec<Vector3<f64>> = bindings
        .iter()
        .map(|b| {
            let f = mesh.faces[b.tri_index];
            let centroid = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
            Vector3::from_fn(|ch, _| {
                let mut v: f64 = 0.5;
                for (a, w, phi) in &field[ch] {
                    v += a * (w.dot(&centroid) + phi).sin();
                }
                v.clamp(0.05, 0.95)
            })
        })
        .collect();

    let n = bindings.len();
    Ok(GaussianScene {
        mesh,
        bindings,
        colors,
        logit_opacities: vec![logit(0.9); n],
    })
}

fn sphere_mesh(radius: f64, segments: usize, rings: usize) -> ParametricMesh {
    let mut vertices = Vec::new();
    vertices.push(Vector3::new(0.0, -radius, 0.0));
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64 - std::f64::consts::FRAC_PI_2;
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vector3::new(
                radius * phi.cos() * theta.cos(),
                radius * phi.sin(),
                radius * phi.cos() * theta.sin(),
            ));
        }
    }
    vertices.push(Vector3::new(0.0, radius, 0.0));
    let top = vertices.len() - 1;

    let mut faces = Vec::new();
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
    for s in 0..segments {
        faces.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    for s in 0..segments {
        faces.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    ParametricMesh::new(vertices, faces).expect("sphere topology is valid")
}

pub fn orbit_intrinsics(width: usize, height: usize) -> Intrinsics {
    Intrinsics {
        fx: 1.2 * width as f64,
        fy: 1.2 * width as f64,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    }
}

/// Renders an orbit of clean views (images + depth maps); view 0 is the
/// reference view.
pub fn render_views(
    scene: &GaussianScene,
    n_views: usize,
    width: usize,
    height: usize,
) -> Result<ViewDataset> {
    render_views_offset(scene, n_views, width, height, 0.0)
}

/// Orbit renders with a global azimuth offset (for held-out poses between
/// the training azimuths).
pub fn render_views_offset(
    scene: &GaussianScene,
    n_views: usize,
    width: usize,
    height: usize,
    azimuth_offset: f64,
) -> Result<ViewDataset> {
    if n_views < 2 {
        return Err(Error::Config(format!(
            "synthetic capture needs at least 2 views, got {n_views}"
        )));
    }
    let cams = orbit_cameras_offset(
        n_views,
        ORBIT_RADIUS,
        Vector3::zeros(),
        orbit_intrinsics(width, height),
        azimuth_offset,
    )?;
    let gaussians = scene.realize()?;
    let mut views = Vec::with_capacity(n_views);
    for (id, camera) in cams.into_iter().enumerate() {
        let out = render(&gaussians, &camera, Vector3::zeros())?;
        let mut depth = ScalarImage::new(width, height);
        for i in 0..depth.data.len() {
            if out.alpha.data[i] >= DEPTH_VALID_ALPHA {
                depth.data[i] = out.depth.data[i];
            }
        }
        views.push(View {
            id,
            camera,
            image: out.color,
            depth: Some(DepthImage::new(depth)),
        });
    }
    Ok(ViewDataset {
        views,
        reference_view: 0,
    })
}

fn sample_record(
    view: usize,
    spec: &InconsistencySpec,
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> PerturbationRecord {
    let s = spec.color_sigma;
    let gains = [
        rng.random_range(1.0 - s..=1.0 + s),
        rng.random_range(1.0 - s..=1.0 + s),
        rng.random_range(1.0 - s..=1.0 + s),
    ];
    let biases = [
        rng.random_range(-s..=s),
        rng.random_range(-s..=s),
        rng.random_range(-s..=s),
    ];
    let blobs = (0..spec.blob_count)
        .map(|_| BlobRecord {
            center: [
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            ],
            radius: rng.random_range(spec.blob_radius.0..=spec.blob_radius.1),
            amplitude: std::array::from_fn(|_| {
                let mag = rng.random_range(spec.blob_amplitude.0..=spec.blob_amplitude.1);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }),
        })
        .collect();
    let jitter = (spec.jitter > 0.0).then(|| {
        let (gw, gh) = (4, 4);
        JitterField {
            grid_w: gw,
            grid_h: gh,
            displacements: (0..gw * gh)
                .map(|_| {
                    [
                        rng.random_range(-spec.jitter..=spec.jitter),
                        rng.random_range(-spec.jitter..=spec.jitter),
                    ]
                })
                .collect(),
        }
    });
    PerturbationRecord {
        view,
        gains,
        biases,
        blobs,
        jitter,
    }
}

/// Applies a recorded perturbation: jitter resample, then the color affine,
/// then additive blobs, clamped to [0, 1]. Replaying the same record on the
/// same image is bit-identical by construction.
pub fn apply_record(img: &Image, record: &PerturbationRecord) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = match &record.jitter {
        None => img.clone(),
        Some(field) => {
            let mut warped = Image::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let [dx, dy] = field.sample(x as f64, y as f64, w, h);
                    let src = bilinear_clamped(img, x as f64 + dx, y as f64 + dy);
                    warped.set(x, y, src);
                }
            }
            warped
        }
    };
    for y in 0..h {
        for x in 0..w {
            let mut px = out.get(x, y);
            for ch in 0..3 {
                px[ch] = record.gains[ch] * px[ch] + record.biases[ch];
            }
            for blob in &record.blobs {
                let d2 = (x as f64 - blob.center[0]).powi(2) + (y as f64 - blob.center[1]).powi(2);
                // Finite support: beyond 4 radii the contribution is below
                // 8-bit quantization, and locality stays exact.
                if d2 > (4.0 * blob.radius).powi(2) {
                    continue;
                }
                let g = (-0.5 * d2 / (blob.radius * blob.radius)).exp();
                for ch in 0..3 {
                    px[ch] += blob.amplitude[ch] * g;
                }
            }
            for v in px.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            out.set(x, y, px);
        }
    }
    out
}

impl JitterField {
    /// Bilinear displacement at a pixel, grid cells spanning the image.
    fn sample(&self, x: f64, y: f64, width: usize, height: usize) -> [f64; 2] {
        let gx = x / (width.max(2) - 1) as f64 * (self.grid_w - 1) as f64;
        let gy = y / (height.max(2) - 1) as f64 * (self.grid_h - 1) as f64;
        let x0 = (gx.floor() as usize).min(self.grid_w - 2);
        let y0 = (gy.floor() as usize).min(self.grid_h - 2);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let at = |i: usize, j: usize| self.displacements[j * self.grid_w + i];
        let mut out = [0.0; 2];
        for k in 0..2 {
            let top = at(x0, y0)[k] * (1.0 - fx) + at(x0 + 1, y0)[k] * fx;
            let bot = at(x0, y0 + 1)[k] * (1.0 - fx) + at(x0 + 1, y0 + 1)[k] * fx;
            out[k] = top * (1.0 - fy) + bot * fy;
        }
        out
    }
}

fn bilinear_clamped(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let xc = x.clamp(0.0, (img.width - 1) as f64);
    let yc = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    if fx == 0.0 && fy == 0.0 {
        return img.get(x0, y0);
    }
    let mut out = [0.0; 3];
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    for ch in 0..3 {
        let top = p00[ch] * (1.0 - fx) + p10[ch] * fx;
        let bot = p01[ch] * (1.0 - fx) + p11[ch] * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Perturbs every non-reference view (and optionally the reference) of a
/// clean dataset. The clean input is never mutated.
pub fn inject(dataset: &ViewDataset, spec: &InconsistencySpec) -> Result<SyntheticBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut perturbed = dataset.clone();
    let mut records = Vec::with_capacity(dataset.views.len());
    for view in perturbed.views.iter_mut() {
        // One RNG stream, consumed in view order: skip-or-apply must still
        // sample identically, so the reference draws its record too.
        let record = sample_record(view.id, spec, view.image.width, view.image.height, &mut rng);
        let keep_clean = view.id == dataset.reference_view && !spec.perturb_reference;
        let record = if keep_clean {
            PerturbationRecord::identity(view.id)
        } else {
            record
        };
        view.image = apply_record(&view.image, &record);
        records.push(record);
    }
    Ok(SyntheticBundle {
        clean: dataset.clone(),
        perturbed,
        records,
    })
}
