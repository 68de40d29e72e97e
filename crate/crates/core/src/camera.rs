//! Pinhole cameras, rigid poses, and orbit-camera generation.
//!
//! Conventions (also documented in `docs/FORMATS.md`):
//! - Poses are world-to-camera. Camera frame: +x right, +y down, +z forward.
//! - Image origin is the top-left pixel; pixel centers sit at integer
//!   coordinates, so pixel `(i, j)` samples the continuous point `(i, j)`.
//! - Depth is the camera-frame z coordinate, not ray length.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rigid transform: `x_out = R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal
    /// with determinant +1 (to 1e-6).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation * rotation.transpose();
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (|R R^T - I| = {err:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation determinant is {:.6}, expected +1",
                rotation.determinant()
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `compose(a, b)` applies `b` first: `(a ∘ b)(x) = a(b(x))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_t = self.rotation.transpose();
        RigidTransform {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }
}

/// Pinhole intrinsics without a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidCamera(format!(
                "image size must be at least 1x1 (got {}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Pinhole camera: intrinsics plus a world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: RigidTransform,
}

/// Minimum camera-frame depth treated as "in front of" the camera.
pub const MIN_PROJECT_DEPTH: f64 = 1e-8;

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: RigidTransform) -> Result<Self> {
        intrinsics.validate()?;
        // Re-validate the rotation so cameras deserialized from files get checked too.
        let pose = RigidTransform::new(pose.rotation, pose.translation)?;
        Ok(Self { intrinsics, pose })
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics.fx
    }
    pub fn fy(&self) -> f64 {
        self.intrinsics.fy
    }
    pub fn cx(&self) -> f64 {
        self.intrinsics.cx
    }
    pub fn cy(&self) -> f64 {
        self.intrinsics.cy
    }
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.pose.rotation.transpose() * self.pose.translation)
    }

    /// Projects a world point to pixel coordinates and camera-frame depth.
    pub fn project(&self, point_world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let p = self.pose.apply(point_world);
        if p.z <= MIN_PROJECT_DEPTH {
            return Err(Error::BehindCamera { z: p.z });
        }
        let pixel = Vector2::new(
            self.fx() * p.x / p.z + self.cx(),
            self.fy() * p.y / p.z + self.cy(),
        );
        Ok((pixel, p.z))
    }

    /// Lifts a pixel with known depth back to a world point. Exact inverse
    /// of [`Camera::project`].
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if depth <= 0.0 {
            return Err(Error::InvalidDepth { depth });
        }
        let p_cam = Vector3::new(
            (pixel.x - self.cx()) / self.fx() * depth,
            (pixel.y - self.cy()) / self.fy() * depth,
            depth,
        );
        Ok(self.pose.inverse().apply(&p_cam))
    }

    /// Camera at `center` looking at `target`, world +y kept upward in the image.
    pub fn look_at(
        center: Vector3<f64>,
        target: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let forward = target - center;
        if forward.norm() <= 1e-12 {
            return Err(Error::InvalidCamera(
                "look_at target coincides with camera center".into(),
            ));
        }
        let z = forward.normalize();
        let world_up = Vector3::new(0.0, 1.0, 0.0);
        let x = z.cross(&world_up);
        if x.norm() <= 1e-9 {
            return Err(Error::InvalidCamera(
                "look_at direction is parallel to the vertical axis".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Camera::new(intrinsics, RigidTransform { rotation, translation })
    }
}

/// `n` cameras evenly spaced in azimuth on a horizontal circle of the given
/// radius around `target`, all looking at `target`. Camera 0 sits on the
/// target's -z side; azimuth step is 360°/n.
pub fn orbit_cameras(
    n: usize,
    radius: f64,
    target: Vector3<f64>,
    intrinsics: Intrinsics,
) -> Result<Vec<Camera>> {
    if n < 1 {
        return Err(Error::Config("orbit camera count must be at least 1".into()));
    }
    if radius <= 0.0 {
        return Err(Error::Config(format!(
            "orbit radius must be positive, got {radius}"
        )));
    }
    orbit_cameras_offset(n, radius, target, intrinsics, 0.0)
}

/// Like [`orbit_cameras`] but with all azimuths shifted by `offset` radians.
/// Used to generate held-out poses interleaved with a training orbit.
pub fn orbit_cameras_offset(
    n: usize,
    radius: f64,
    target: Vector3<f64>,
    intrinsics: Intrinsics,
    offset: f64,
) -> Result<Vec<Camera>> {
    (0..n)
        .map(|i| {
            let azimuth = offset + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let center =
                target + radius * Vector3::new(azimuth.sin(), 0.0, -azimuth.cos());
            Camera::look_at(center, target, intrinsics)
        })
        .collect()
}

/// On-disk camera record for `cameras.json` (rotation row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(cam: &Camera) -> Self {
        let r = &cam.pose.rotation;
        CameraRecord {
            fx: cam.fx(),
            fy: cam.fy(),
            cx: cam.cx(),
            cy: cam.cy(),
            width: cam.width(),
            height: cam.height(),
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [
                cam.pose.translation.x,
                cam.pose.translation.y,
                cam.pose.translation.z,
            ],
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = Error;

    fn try_from(rec: &CameraRecord) -> Result<Camera> {
        let r = &rec.rotation;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let translation = Vector3::new(rec.t[0], rec.t[1], rec.t[2]);
        Camera::new(
            Intrinsics {
                fx: rec.fx,
                fy: rec.fy,
                cx: rec.cx,
                cy: rec.cy,
                width: rec.width,
                height: rec.height,
            },
            RigidTransform {
                rotation,
                translation,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        // Random axis-angle, exponentiated by Rodrigues.
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        )
        .normalize();
        let angle: f64 = rng.random_range(-3.0..3.0);
        let k = Matrix3::new(
            0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0,
        );
        Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
    }

    fn random_camera(rng: &mut impl Rng) -> Camera {
        let rotation = random_rotation(rng);
        let translation = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Camera::new(
            Intrinsics {
                fx: rng.random_range(50.0..200.0),
                fy: rng.random_range(50.0..200.0),
                cx: rng.random_range(30.0..70.0),
                cy: rng.random_range(30.0..70.0),
                width: 100,
                height: 100,
            },
            RigidTransform {
                rotation,
                translation,
            },
        )
        .unwrap()
    }

    #[test]
    fn project_on_optical_axis() {
        let cam = Camera::new(
            Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.0,
                cy: 0.0,
                width: 1,
                height: 1,
            },
            RigidTransform::identity(),
        )
        .unwrap();
        let (px, depth) = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        assert_eq!(depth, 1.0);
    }

    #[test]
    fn project_hand_arithmetic() {
        let cam = Camera::new(
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 64.0,
                cy: 64.0,
                width: 128,
                height: 128,
            },
            RigidTransform::identity(),
        )
        .unwrap();
        let (px, depth) = cam.project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert!((px.x - 114.0).abs() < 1e-12);
        assert!((px.y - 64.0).abs() < 1e-12);
        assert_eq!(depth, 2.0);
    }

    #[test]
    fn project_behind_camera_errors() {
        let cam = Camera::new(
            Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.0,
                cy: 0.0,
                width: 1,
                height: 1,
            },
            RigidTransform::identity(),
        )
        .unwrap();
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn unproject_identity_camera() {
        let cam = Camera::new(
            Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.0,
                cy: 0.0,
                width: 1,
                height: 1,
            },
            RigidTransform::identity(),
        )
        .unwrap();
        let p = cam.unproject(&Vector2::new(0.0, 0.0), 1.0).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!(matches!(
            cam.unproject(&Vector2::new(0.0, 0.0), 0.0),
            Err(Error::InvalidDepth { .. })
        ));
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let cam = random_camera(&mut rng);
            let point = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let Ok((pixel, depth)) = cam.project(&point) else {
                continue;
            };
            let back = cam.unproject(&pixel, depth).unwrap();
            assert!(
                (back - point).norm() < 1e-9,
                "round trip error {:.3e}",
                (back - point).norm()
            );
            checked += 1;
        }
    }

    /// Independent matrix-form unprojection: invert the full 3x3 projection
    /// chain K [R|t] numerically instead of reusing the camera's own inverse.
    #[test]
    fn unproject_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let cam = random_camera(&mut rng);
            let pixel = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let depth = rng.random_range(0.1..10.0);

            let k = Matrix3::new(
                cam.fx(),
                0.0,
                cam.cx(),
                0.0,
                cam.fy(),
                cam.cy(),
                0.0,
                0.0,
                1.0,
            );
            // Homogeneous pixel scaled by depth equals K (R p + t).
            let rhs = Vector3::new(pixel.x * depth, pixel.y * depth, depth);
            let p_cam = k.try_inverse().unwrap() * rhs;
            let expected = cam.pose.rotation.try_inverse().unwrap() * (p_cam - cam.pose.translation);

            let got = cam.unproject(&pixel, depth).unwrap();
            assert!(
                (got - expected).norm() < 1e-9,
                "oracle mismatch {:.3e}",
                (got - expected).norm()
            );
        }
    }

    #[test]
    fn pose_composition_is_application_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let a = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let b = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let x = Vector3::new(rng.random(), rng.random(), rng.random());
            let lhs = a.compose(&b).apply(&x);
            let rhs = a.apply(&b.apply(&x));
            assert!((lhs - rhs).norm() < 1e-9);
        }
    }

    #[test]
    fn orbit_has_24_views_at_equal_angles() {
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
        };
        let target = Vector3::new(0.3, -0.2, 0.1);
        let cams = orbit_cameras(24, 2.5, target, intr).unwrap();
        assert_eq!(cams.len(), 24);

        // Consecutive centers subtend equal angles at the target.
        let expected = 2.0 * std::f64::consts::PI / 24.0;
        for i in 0..24 {
            let a = (cams[i].center() - target).normalize();
            let b = (cams[(i + 1) % 24].center() - target).normalize();
            let angle = a.dot(&b).clamp(-1.0, 1.0).acos();
            assert!(
                (angle - expected).abs() < 1e-9,
                "angle {i}: {angle} vs {expected}"
            );
        }

        // Every orbit camera puts the target on the principal ray.
        for cam in &cams {
            let (px, _) = cam.project(&target).unwrap();
            assert!((px.x - cam.cx()).abs() < 1e-6);
            assert!((px.y - cam.cy()).abs() < 1e-6);
        }
    }

    #[test]
    fn single_orbit_camera_sits_on_negative_z() {
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.0,
            cy: 0.0,
            width: 64,
            height: 64,
        };
        let cams = orbit_cameras(1, 2.0, Vector3::zeros(), intr).unwrap();
        assert_eq!(cams.len(), 1);
        let c = cams[0].center();
        assert!((c - Vector3::new(0.0, 0.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cam = random_camera(&mut rng);
        let rec = CameraRecord::from(&cam);
        let back = Camera::try_from(&rec).unwrap();
        assert_eq!(cam, back);
    }

    #[test]
    fn bad_rotation_rejected() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.5;
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        // Reflection (det -1) rejected too.
        let refl = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(refl, Vector3::zeros()).is_err());
    }
}
