//! Poses, motions, forward kinematics and the kinematic quantities derived from them.
//!
//! The root transform acts as an extra armature above joint 0: joint 0 sits at
//! `x_r + Θ_r · offset_0` with global rotation `Θ_r · R_0`. Root displacement
//! integrates the per-frame velocity with forward Euler starting from the origin.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, DiffError, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rotation::{self, add, mat_mul, mat_vec, norm, sub, Mat3, Rot6, Vec3, IDENTITY_6D};
use crate::skeleton::Skeleton;

/// Per-frame channel count for a skeleton with `joints` joints.
pub fn motion_channels(joints: usize) -> usize {
    6 * (joints + 1) + 3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<Rot6>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self { rotations: vec![IDENTITY_6D; joints] }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rotations.iter().flatten().copied().collect()
    }

    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 6 != 0 {
            return Err(Error::Validation(format!("pose vector length {} is not a multiple of 6", data.len())));
        }
        Ok(Self { rotations: data.chunks_exact(6).map(|c| c.try_into().unwrap()).collect() })
    }

    pub fn matrices(&self) -> std::result::Result<Vec<Mat3>, (usize, rotation::RotationError)> {
        self.rotations.iter().enumerate().map(|(j, r)| rotation::rot6d_to_matrix(r).map_err(|e| (j, e))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootTransform {
    pub orientation: Rot6,
    /// World-frame displacement to the next frame, in skeleton length units.
    pub velocity: Vec3,
}

impl Default for RootTransform {
    fn default() -> Self {
        Self { orientation: IDENTITY_6D, velocity: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub pose: Pose,
    pub root: RootTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub frames: Vec<Frame>,
    pub frame_rate: f64,
    /// Position of the root armature at frame 0 in the source file; FK ignores it.
    #[serde(default)]
    pub origin: Vec3,
}

impl Motion {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self> {
        let m = Self { frames, frame_rate, origin: [0.0; 3] };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(joints: usize, frames: usize, frame_rate: f64) -> Self {
        let f = Frame { pose: Pose::identity(joints), root: RootTransform::default() };
        Self { frames: vec![f; frames], frame_rate, origin: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Validation(format!("frame rate must be positive, got {}", self.frame_rate)));
        }
        let j = self.joint_count();
        for (t, f) in self.frames.iter().enumerate() {
            if f.pose.rotations.len() != j {
                return Err(Error::Validation(format!(
                    "frame {t} has {} joints, expected {j}",
                    f.pose.rotations.len()
                )));
            }
            let finite = f
                .pose
                .rotations
                .iter()
                .flatten()
                .chain(&f.root.orientation)
                .chain(&f.root.velocity)
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Validation(format!("frame {t} has a non-finite channel")));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, skeleton: &Skeleton) -> Result<()> {
        self.validate()?;
        if self.joint_count() != skeleton.joint_count() && !self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "motion has {} joints, skeleton has {}",
                self.joint_count(),
                skeleton.joint_count()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.pose.rotations.len())
    }

    /// Row-major `T × (6(J+1)+3)`: joint rotations, then root orientation, then root velocity.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * motion_channels(self.joint_count()));
        for f in &self.frames {
            out.extend(f.pose.rotations.iter().flatten());
            out.extend(f.root.orientation);
            out.extend(f.root.velocity);
        }
        out
    }

    pub fn from_flat(data: &[f64], joints: usize, frame_rate: f64) -> Result<Self> {
        let c = motion_channels(joints);
        if data.len() % c != 0 {
            return Err(Error::Validation(format!("flat motion length {} is not a multiple of {c}", data.len())));
        }
        let frames = data
            .chunks_exact(c)
            .map(|row| Frame {
                pose: Pose::from_flat(&row[..6 * joints]).unwrap(),
                root: RootTransform {
                    orientation: row[6 * joints..6 * joints + 6].try_into().unwrap(),
                    velocity: row[6 * joints + 6..].try_into().unwrap(),
                },
            })
            .collect();
        Motion::new(frames, frame_rate)
    }

    pub fn slice(&self, start: usize, len: usize) -> Motion {
        Motion { frames: self.frames[start..start + len].to_vec(), frame_rate: self.frame_rate, origin: self.origin }
    }

    /// Root armature positions `x_r(t)`, starting at the origin.
    pub fn root_positions(&self) -> Vec<Vec3> {
        let mut x = [0.0; 3];
        self.frames
            .iter()
            .map(|f| {
                let here = x;
                x = add(x, f.root.velocity);
                here
            })
            .collect()
    }
}

/// A `T × J` grid of 3-vectors: positions from FK, or differences thereof.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPositions {
    frames: usize,
    joints: usize,
    data: Vec<Vec3>,
}

impl JointPositions {
    pub fn new(frames: usize, joints: usize, data: Vec<Vec3>) -> Result<Self> {
        if data.len() != frames * joints {
            return Err(Error::Validation(format!("{} vectors for {frames} frames of {joints} joints", data.len())));
        }
        Ok(Self { frames, joints, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn get(&self, t: usize, j: usize) -> Vec3 {
        self.data[t * self.joints + j]
    }

    pub fn frame(&self, t: usize) -> &[Vec3] {
        &self.data[t * self.joints..(t + 1) * self.joints]
    }

    pub fn data(&self) -> &[Vec3] {
        &self.data
    }

    pub fn reversed(&self) -> Self {
        let data = (0..self.frames).rev().flat_map(|t| self.frame(t).to_vec()).collect();
        Self { frames: self.frames, joints: self.joints, data }
    }
}

/// Global positions and rotations of every joint for one frame.
pub fn fk_frame(
    skeleton: &Skeleton,
    pose: &Pose,
    root_rotation: &Mat3,
    root_position: Vec3,
) -> std::result::Result<(Vec<Vec3>, Vec<Mat3>), (usize, rotation::RotationError)> {
    let local = pose.matrices()?;
    let n = skeleton.joint_count();
    let mut pos: Vec<Vec3> = Vec::with_capacity(n);
    let mut rot: Vec<Mat3> = Vec::with_capacity(n);
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let (gp, xp) = match joint.parent {
            Some(p) => (rot[p], pos[p]),
            None => (*root_rotation, root_position),
        };
        pos.push(add(xp, mat_vec(&gp, joint.offset)));
        rot.push(mat_mul(&gp, &local[j]));
    }
    Ok((pos, rot))
}

/// FK for every frame, also returning the global rotation of each joint.
pub fn forward_kinematics_full(skeleton: &Skeleton, motion: &Motion) -> Result<(JointPositions, Vec<Mat3>)> {
    motion.validate_for(skeleton)?;
    let j = skeleton.joint_count();
    let roots = motion.root_positions();
    let mut pos = Vec::with_capacity(motion.len() * j);
    let mut rots = Vec::with_capacity(motion.len() * j);
    for (t, (f, xr)) in motion.frames.iter().zip(roots).enumerate() {
        let g_r = rotation::rot6d_to_matrix(&f.root.orientation).map_err(|source| Error::Rotation {
            frame: t,
            joint: j,
            source,
        })?;
        let (p, r) = fk_frame(skeleton, &f.pose, &g_r, xr).map_err(|(joint, source)| Error::Rotation {
            frame: t,
            joint,
            source,
        })?;
        pos.extend(p);
        rots.extend(r);
    }
    Ok((JointPositions { frames: motion.len(), joints: j, data: pos }, rots))
}

/// Global joint positions. Rotation errors report the joint index, with
/// `J` standing for the root armature.
pub fn forward_kinematics(skeleton: &Skeleton, motion: &Motion) -> Result<JointPositions> {
    forward_kinematics_full(skeleton, motion).map(|(p, _)| p)
}

pub fn rest_pose_positions(skeleton: &Skeleton) -> Vec<Vec3> {
    skeleton.rest_positions()
}

/// Backward differences: entry `t` holds `x(t+1) − x(t)`.
pub fn joint_velocities(positions: &JointPositions) -> Result<JointPositions> {
    if positions.frames < 2 {
        return Err(Error::TooShort { op: "joint_velocities", need: 2, got: positions.frames });
    }
    let j = positions.joints;
    let data = (1..positions.frames)
        .flat_map(|t| (0..j).map(move |k| (t, k)))
        .map(|(t, k)| sub(positions.get(t, k), positions.get(t - 1, k)))
        .collect();
    Ok(JointPositions { frames: positions.frames - 1, joints: j, data })
}

/// `(T−1) × |Φ|` contact flags, set where a foot moves slower than `eps` per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactLabels {
    frames: usize,
    feet: usize,
    data: Vec<bool>,
}

impl ContactLabels {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn feet(&self) -> usize {
        self.feet
    }

    pub fn get(&self, t: usize, k: usize) -> bool {
        self.data[t * self.feet + k]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    pub fn from_data(frames: usize, feet: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != frames * feet {
            return Err(Error::Validation(format!("{} labels for {frames}×{feet}", data.len())));
        }
        Ok(Self { frames, feet, data })
    }
}

/// Default contact threshold in heights per frame.
pub const DEFAULT_CONTACT_EPS: f64 = 0.006;

pub fn contact_labels(positions: &JointPositions, feet: &[usize], eps: f64) -> Result<ContactLabels> {
    if feet.is_empty() {
        return Err(Error::Config("contact labels need at least one foot joint".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("contact threshold must be positive, got {eps}")));
    }
    if let Some(&f) = feet.iter().find(|&&f| f >= positions.joints) {
        return Err(Error::Config(format!("foot joint {f} out of range")));
    }
    let v = joint_velocities(positions)?;
    let data =
        (0..v.frames).flat_map(|t| feet.iter().map(move |&f| (t, f))).map(|(t, f)| norm(v.get(t, f)) < eps).collect();
    Ok(ContactLabels { frames: v.frames, feet: feet.len(), data })
}

/// Exclusive cumulative sum of `[B, T, 3]` root velocities: `x_r(0) = 0`.
pub fn root_positions_graph(g: &mut Graph, velocity: NodeId) -> Result<NodeId, DiffError> {
    g.cumsum(velocity, 1, true)
}

/// Differentiable FK over a batch of `N` frames.
///
/// `pose` is `[N, 6J]`, `orientation` is `[N, 6]` and `root_position` is `[N, 3]`;
/// the result is `[N, J, 3]`.
pub fn forward_kinematics_graph(
    g: &mut Graph,
    skeleton: &Skeleton,
    pose: NodeId,
    orientation: NodeId,
    root_position: NodeId,
) -> Result<NodeId> {
    let j = skeleton.joint_count();
    let n = g.shape(pose)[0];
    if g.shape(pose) != [n, 6 * j] || g.shape(orientation) != [n, 6] || g.shape(root_position) != [n, 3] {
        return Err(Error::Validation(format!(
            "FK inputs {:?}, {:?}, {:?} do not fit {j} joints",
            g.shape(pose),
            g.shape(orientation),
            g.shape(root_position)
        )));
    }
    let rot = |g: &mut Graph, x: NodeId, joint: usize| {
        rotation::rot6d_to_matrix_graph(g, x).map_err(|e| match e {
            DiffError::Degenerate { row, .. } => {
                Error::Rotation { frame: row, joint, source: rotation::RotationError::Parallel }
            }
            other => other.into(),
        })
    };
    let g_root = rot(g, orientation, j)?;
    let mut globals: Vec<NodeId> = Vec::with_capacity(j);
    let mut positions: Vec<NodeId> = Vec::with_capacity(j);
    for (k, joint) in skeleton.joints().iter().enumerate() {
        let (gp, xp) = match joint.parent {
            Some(p) => (globals[p], positions[p]),
            None => (g_root, root_position),
        };
        let flat = g.reshape(gp, &[n * 3, 3])?;
        let off = g.constant(Array::new(vec![3, 1], joint.offset.to_vec())?);
        let moved = g.matmul(flat, off)?;
        let moved = g.reshape(moved, &[n, 3])?;
        positions.push(g.add(xp, moved)?);
        if skeleton.children(k).is_empty() {
            // Leaves have no dependents; their global rotation is never needed.
            globals.push(gp);
            continue;
        }
        let r6 = g.slice(pose, 1, 6 * k, 6 * k + 6)?;
        let local = rot(g, r6, k)?;
        globals.push(g.matmul(gp, local)?);
    }
    let all = g.concat(&positions, 1)?;
    Ok(g.reshape(all, &[n, j, 3])?)
}
