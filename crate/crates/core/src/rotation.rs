//! Rotation matrices, the continuous 6D encoding and BVH Euler conversions.
//!
//! Matrices are row-major `m[row][col]` and act on column vectors.

use thiserror::Error;

use crate::autodiff::{DiffError, Graph, NodeId};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];
pub type Rot6 = [f64; 6];

/// Norm below which a 6D input counts as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-9;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("degenerate 6D rotation: first column has zero length")]
    ZeroFirst,
    #[error("degenerate 6D rotation: second column is parallel to the first")]
    Parallel,
    #[error("matrix is not a rotation (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("non-finite rotation entry")]
    NonFinite,
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            out[c][r] = *v;
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Largest entry of `|RᵀR − I|`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let p = mat_mul(&transpose(m), m);
    let mut worst: f64 = 0.0;
    for (r, row) in p.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

pub fn rot6d_to_matrix(r: &Rot6) -> Result<Mat3, RotationError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(RotationError::NonFinite);
    }
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm(a1);
    if n1 < DEGENERATE_EPS {
        return Err(RotationError::ZeroFirst);
    }
    let b1 = scale(a1, 1.0 / n1);
    let u = sub(a2, scale(b1, dot(b1, a2)));
    let nu = norm(u);
    if nu < DEGENERATE_EPS {
        return Err(RotationError::Parallel);
    }
    let b2 = scale(u, 1.0 / nu);
    let b3 = cross(b1, b2);
    Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
}

pub fn matrix_to_rot6d(m: &Mat3) -> Result<Rot6, RotationError> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RotationError::NonFinite);
    }
    let err = orthonormality_error(m).max((det(m) - 1.0).abs());
    if err > 1e-4 {
        return Err(RotationError::NotOrthonormal(err));
    }
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

/// Rodrigues rotation about `axis` (normalized internally) by `angle` radians.
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let n = norm(axis);
    if n == 0.0 {
        return IDENTITY;
    }
    let [x, y, z] = scale(axis, 1.0 / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Angle in radians of the relative rotation `aᵀb`.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let rel = mat_mul(&transpose(a), b);
    let tr = rel[0][0] + rel[1][1] + rel[2][2];
    let axis = [rel[2][1] - rel[1][2], rel[0][2] - rel[2][0], rel[1][0] - rel[0][1]];
    (0.5 * norm(axis)).atan2(0.5 * (tr - 1.0))
}

pub fn rot_x(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rot_z(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn matrix(self, deg: f64) -> Mat3 {
        match self {
            Axis::X => rot_x(deg),
            Axis::Y => rot_y(deg),
            Axis::Z => rot_z(deg),
        }
    }
}

/// Composes `R = R_a0(e0) · R_a1(e1) · R_a2(e2)` in channel order, angles in degrees.
pub fn euler_to_matrix(order: [Axis; 3], deg: [f64; 3]) -> Mat3 {
    let m = mat_mul(&order[0].matrix(deg[0]), &order[1].matrix(deg[1]));
    mat_mul(&m, &order[2].matrix(deg[2]))
}

/// Decomposes `R = Rz(a) · Ry(b) · Rx(c)`, returning `[a, b, c]` in degrees.
pub fn matrix_to_euler_zyx(m: &Mat3) -> [f64; 3] {
    let sy = (-m[2][0]).clamp(-1.0, 1.0);
    let b = sy.asin();
    let (a, c) = if b.cos() > 1e-9 {
        (m[1][0].atan2(m[0][0]), m[2][1].atan2(m[2][2]))
    } else {
        (0.0, (-m[1][2]).atan2(m[1][1]))
    };
    [a.to_degrees(), b.to_degrees(), c.to_degrees()]
}

/// Batched Gram-Schmidt on a graph: `[N, 6]` to `[N, 3, 3]` matrices with
/// `out[n][r][c]` the row-`r`, column-`c` entry.
pub fn rot6d_to_matrix_graph(g: &mut Graph, r: NodeId) -> Result<NodeId, DiffError> {
    let n = g.shape(r)[0];
    let a1 = g.slice(r, 1, 0, 3)?;
    let a2 = g.slice(r, 1, 3, 6)?;
    let b1 = g.normalize(a1)?;
    let d = g.mul(b1, a2)?;
    let d = g.sum_axis(d, 1)?;
    let d = g.broadcast_last(d, 3);
    let proj = g.mul(d, b1)?;
    let u = g.sub(a2, proj)?;
    let b2 = g.normalize(u)?;
    let b3 = g.cross(b1, b2)?;
    let rows = g.concat(&[b1, b2, b3], 1)?;
    let rows = g.reshape(rows, &[n, 3, 3])?;
    g.permute(rows, &[0, 2, 1])
}
