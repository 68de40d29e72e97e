//! Quaternion helpers shared by the scene and the renderer backward pass.
//!
//! Quaternions are stored `[w, x, y, z]`.

use nalgebra::Matrix3;

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize(q: &Quat) -> Quat {
    let n = norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation matrix for a unit quaternion.
pub fn to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`to_matrix`] with respect to each unit-quaternion
/// component, in `[d/dw, d/dx, d/dy, d/dz]` order.
pub fn matrix_jacobian(q: &Quat) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Backpropagates a gradient through `q_hat = q / |q|`.
pub fn normalize_backward(q: &Quat, d_qhat: &Quat) -> Quat {
    let n = norm(q);
    let qh = normalize(q);
    let dot = qh[0] * d_qhat[0] + qh[1] * d_qhat[1] + qh[2] * d_qhat[2] + qh[3] * d_qhat[3];
    [
        (d_qhat[0] - qh[0] * dot) / n,
        (d_qhat[1] - qh[1] * dot) / n,
        (d_qhat[2] - qh[2] * dot) / n,
        (d_qhat[3] - qh[3] * dot) / n,
    ]
}

/// Gradient of `mul(a, b)` with respect to `b` for fixed `a`: the left
/// multiplication is linear, `out = L(a) b`, so this applies `L(a)^T`.
pub fn mul_backward_rhs(a: &Quat, d_out: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    // Columns of L(a) as read off `mul`.
    [
        aw * d_out[0] + ax * d_out[1] + ay * d_out[2] + az * d_out[3],
        -ax * d_out[0] + aw * d_out[1] + az * d_out[2] - ay * d_out[3],
        -ay * d_out[0] - az * d_out[1] + aw * d_out[2] + ax * d_out[3],
        -az * d_out[0] + ay * d_out[1] - ax * d_out[2] + aw * d_out[3],
    ]
}

/// Unit quaternion for an orthonormal rotation matrix (Shepperd's method).
pub fn from_matrix(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    normalize(&q)
}
