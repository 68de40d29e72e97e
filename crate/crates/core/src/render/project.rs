//! Perspective projection of 3D Gaussians to screen-space ellipses.
//!
//! The 2D covariance is the first-order (EWA) approximation
//! `J W Σ W^T J^T` plus a 0.3-pixel isotropic floor that keeps footprints
//! at least a fraction of a pixel wide.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::quat;
use crate::scene::Gaussian3D;

/// Isotropic floor added to the projected covariance (pixels^2).
pub const COV2D_FLOOR: f64 = 0.3;
/// Camera-frame near plane; Gaussians at or behind it are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Whole-Gaussian culling uses the 3-sigma ellipse against the image rect.
pub const CULL_SIGMA: f64 = 3.0;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProjection {
    pub mean2d: Vector2<f64>,
    /// Floored 2D covariance.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Projects one Gaussian; `None` means culled (behind the near plane, or its
/// 3-sigma ellipse misses the image entirely).
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Option<GaussianProjection> {
    let p_cam = cam.pose.apply(&g.position);
    if p_cam.z <= NEAR_PLANE {
        return None;
    }
    let (mean2d, cov2d) = project_at(g, cam, &p_cam);

    // 3-sigma axis-aligned extent of the ellipse vs the continuous image
    // rectangle [-0.5, W-0.5] x [-0.5, H-0.5].
    let ex = CULL_SIGMA * cov2d[(0, 0)].max(0.0).sqrt();
    let ey = CULL_SIGMA * cov2d[(1, 1)].max(0.0).sqrt();
    let w = cam.width() as f64;
    let h = cam.height() as f64;
    if mean2d.x + ex < -0.5
        || mean2d.x - ex > w - 0.5
        || mean2d.y + ey < -0.5
        || mean2d.y - ey > h - 0.5
    {
        return None;
    }

    Some(GaussianProjection {
        mean2d,
        cov2d,
        depth: p_cam.z,
    })
}

/// Projection Jacobian of (u, v) with respect to the camera-frame point.
pub fn projection_jacobian(cam: &Camera, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let (fx, fy) = (cam.fx(), cam.fy());
    Matrix2x3::new(
        fx / z,
        0.0,
        -fx * x / (z * z),
        0.0,
        fy / z,
        -fy * y / (z * z),
    )
}

fn project_at(g: &Gaussian3D, cam: &Camera, p_cam: &Vector3<f64>) -> (Vector2<f64>, Matrix2<f64>) {
    let mean2d = Vector2::new(
        cam.fx() * p_cam.x / p_cam.z + cam.cx(),
        cam.fy() * p_cam.y / p_cam.z + cam.cy(),
    );
    let j = projection_jacobian(cam, p_cam);
    let w = cam.pose.rotation;
    let sigma_cam = w * g.covariance() * w.transpose();
    let mut cov2d = j * sigma_cam * j.transpose();
    cov2d[(0, 0)] += COV2D_FLOOR;
    cov2d[(1, 1)] += COV2D_FLOOR;
    // Exact symmetry for downstream inversion.
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    (mean2d, cov2d)
}

/// Everything the backward pass needs about one projection, recomputed
/// rather than stored by the forward pass.
pub(crate) struct ProjectionIntermediates {
    pub p_cam: Vector3<f64>,
    pub j: Matrix2x3<f64>,
    pub sigma_cam: Matrix3<f64>,
    pub rot_world: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub q_hat: quat::Quat,
}

pub(crate) fn projection_intermediates(g: &Gaussian3D, cam: &Camera) -> ProjectionIntermediates {
    let p_cam = cam.pose.apply(&g.position);
    let j = projection_jacobian(cam, &p_cam);
    let q_hat = quat::normalize(&g.rotation);
    let rot_world = quat::to_matrix(&q_hat);
    let w = cam.pose.rotation;
    ProjectionIntermediates {
        p_cam,
        j,
        sigma_cam: w * g.covariance() * w.transpose(),
        rot_world,
        scale: g.scale(),
        q_hat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, RigidTransform};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera {
        Camera::new(
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 32.0,
                width: 64,
                height: 64,
            },
            RigidTransform::identity(),
        )
        .unwrap()
    }

    fn isotropic_gaussian(position: Vector3<f64>, sigma: f64) -> Gaussian3D {
        Gaussian3D {
            position,
            rotation: quat::IDENTITY,
            log_scale: Vector3::from_element(sigma.ln()),
            logit_opacity: 0.0,
            color: Vector3::new(1.0, 1.0, 1.0),
        }
    }

    #[test]
    fn on_axis_isotropic_projects_isotropic_at_center() {
        let cam = test_camera();
        let g = isotropic_gaussian(Vector3::new(0.0, 0.0, 2.0), 0.05);
        let p = project_gaussian(&g, &cam).unwrap();
        assert!((p.mean2d - Vector2::new(32.0, 32.0)).norm() < 1e-12);
        assert_eq!(p.depth, 2.0);
        assert!((p.cov2d[(0, 0)] - p.cov2d[(1, 1)]).abs() < 1e-12);
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
        // sigma_px = fx * sigma / z = 2.5 px, plus the floor.
        let expected = (100.0_f64 * 0.05 / 2.0).powi(2) + COV2D_FLOOR;
        assert!((p.cov2d[(0, 0)] - expected).abs() < 1e-9);
    }

    #[test]
    fn near_plane_culls() {
        let cam = test_camera();
        let g = isotropic_gaussian(Vector3::new(0.0, 0.0, 0.005), 0.05);
        assert!(project_gaussian(&g, &cam).is_none());
    }

    #[test]
    fn off_screen_culls() {
        let cam = test_camera();
        // Projects far outside the 64x64 image with a tiny footprint.
        let g = isotropic_gaussian(Vector3::new(10.0, 0.0, 2.0), 0.01);
        assert!(project_gaussian(&g, &cam).is_none());
    }

    /// Monte-Carlo oracle: sample the 3D Gaussian, project the samples, and
    /// compare the sample covariance against the EWA linearization (before
    /// the floor). At depth >> scale the linearization is accurate to a few
    /// percent.
    #[test]
    fn cov2d_matches_sampled_covariance() {
        let cam = test_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = Gaussian3D {
            position: Vector3::new(0.1, -0.08, 3.0),
            rotation: quat::normalize(&[0.9, 0.2, -0.3, 0.1]),
            log_scale: Vector3::new((0.04_f64).ln(), (0.02_f64).ln(), (0.03_f64).ln()),
            logit_opacity: 0.0,
            color: Vector3::new(1.0, 1.0, 1.0),
        };
        let p = project_gaussian(&g, &cam).unwrap();
        let mut ewa = p.cov2d;
        ewa[(0, 0)] -= COV2D_FLOOR;
        ewa[(1, 1)] -= COV2D_FLOOR;

        let rot = quat::to_matrix(&quat::normalize(&g.rotation));
        let scale = g.scale();
        let n = 1_000_000;
        let mut mean = Vector2::zeros();
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            // Box-Muller pairs.
            let gauss = |rng: &mut ChaCha8Rng| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let local = Vector3::new(
                gauss(&mut rng) * scale.x,
                gauss(&mut rng) * scale.y,
                gauss(&mut rng) * scale.z,
            );
            let world = g.position + rot * local;
            let (px, _) = cam.project(&world).unwrap();
            mean += px;
            samples.push(px);
        }
        mean /= n as f64;
        let mut cov = Matrix2::zeros();
        for s in &samples {
            let d = s - mean;
            cov += d * d.transpose();
        }
        cov /= (n - 1) as f64;

        for i in 0..2 {
            for j in 0..2 {
                let scale_ref = ewa[(0, 0)].max(ewa[(1, 1)]);
                assert!(
                    (cov[(i, j)] - ewa[(i, j)]).abs() < 0.05 * scale_ref,
                    "cov[{i}{j}] sampled {} vs ewa {}",
                    cov[(i, j)],
                    ewa[(i, j)]
                );
            }
        }
    }
}
