use std::collections::BTreeMap;

use crate::autodiff::{Array, DiffError, Graph, NodeId};
use crate::error::{Error, Result};
use crate::motion::{forward_kinematics_graph, root_positions_graph, Motion};
use crate::skeleton::Skeleton;

use super::LossWeights;

/// Source and target joints paired by name for the end-effector and foot terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    /// `(source joint, target joint)` in source end-effector order.
    pub end_effectors: Vec<(usize, usize)>,
    pub feet: Vec<(usize, usize)>,
}

impl Correspondence {
    /// `aliases` maps target joint names to source names.
    pub fn new(source: &Skeleton, target: &Skeleton, aliases: &BTreeMap<String, String>) -> Result<Self> {
        let canon = |j: usize| {
            let n = target.name(j);
            aliases.get(n).map(String::as_str).unwrap_or(n).to_string()
        };
        let pair = |src: &[usize], tgt: &[usize], what: &str| -> Result<Vec<(usize, usize)>> {
            if src.len() != tgt.len() {
                return Err(Error::Config(format!(
                    "{what} sets differ in size: source has {}, target has {}",
                    src.len(),
                    tgt.len()
                )));
            }
            src.iter()
                .map(|&s| {
                    let name = source.name(s);
                    tgt.iter()
                        .find(|&&t| canon(t) == name)
                        .map(|&t| (s, t))
                        .ok_or_else(|| Error::Config(format!("source {what} {name:?} has no target counterpart")))
                })
                .collect()
        };
        Ok(Self {
            end_effectors: pair(source.end_effectors(), target.end_effectors(), "end-effector")?,
            feet: pair(source.feet(), target.feet(), "foot")?,
        })
    }

    pub fn source_feet(&self) -> Vec<usize> {
        self.feet.iter().map(|p| p.0).collect()
    }

    pub fn target_feet(&self) -> Vec<usize> {
        self.feet.iter().map(|p| p.1).collect()
    }

    pub fn source_end_effectors(&self) -> Vec<usize> {
        self.end_effectors.iter().map(|p| p.0).collect()
    }

    pub fn target_end_effectors(&self) -> Vec<usize> {
        self.end_effectors.iter().map(|p| p.1).collect()
    }
}

/// Mean squared difference over all entries.
pub fn reconstruction_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId, DiffError> {
    if g.shape(pred) != g.shape(target) {
        return Err(DiffError::ShapeMismatch {
            op: "reconstruction_loss",
            left: g.shape(pred).to_vec(),
            right: g.shape(target).to_vec(),
        });
    }
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `(mean(fake) − mean(real), −mean(fake))`.
pub fn wgan_losses(g: &mut Graph, real: NodeId, fake: NodeId) -> Result<(NodeId, NodeId), DiffError> {
    let (mr, mf) = (g.mean(real), g.mean(fake));
    let critic = g.sub(mf, mr)?;
    let generator = g.scale(mf, -1.0);
    Ok((critic, generator))
}

fn check_shape(g: &Graph, node: NodeId, want: &[usize], op: &'static str) -> Result<(), DiffError> {
    if g.shape(node) != want {
        return Err(DiffError::ShapeMismatch { op, left: g.shape(node).to_vec(), right: want.to_vec() });
    }
    Ok(())
}

/// `Σ ‖v‖² s / (N |Φ|)` for foot velocities `[B, T−1, F, 3]` and labels `[B, T−1, F]`.
pub fn contact_loss(g: &mut Graph, foot_velocity: NodeId, labels: &Array) -> Result<NodeId, DiffError> {
    let mut want = labels.shape().to_vec();
    want.push(3);
    check_shape(g, foot_velocity, &want, "contact_loss")?;
    let sq = g.square(foot_velocity);
    let speed = g.sum_axis(sq, want.len() - 1)?;
    let s = g.constant(labels.clone());
    let weighted = g.mul(speed, s)?;
    Ok(g.mean(weighted))
}

/// Mean over entries `[.., K, 3]` of `‖a_k / ha_k − b_k / hb_k‖²`, with `b` fixed.
fn normalized_gap(
    g: &mut Graph,
    a: NodeId,
    ha: &[f64],
    b: &Array,
    hb: &[f64],
    op: &'static str,
) -> Result<NodeId, DiffError> {
    check_shape(g, a, b.shape(), op)?;
    let shape = b.shape().to_vec();
    let k = shape[shape.len() - 2];
    if ha.len() != k || hb.len() != k || shape.last() != Some(&3) {
        return Err(DiffError::InvalidShape { op, shape, reason: format!("expected {k} chain lengths per side") });
    }
    let per = |h: &[f64]| -> Vec<f64> { (0..b.len()).map(|i| 1.0 / h[(i / 3) % k]).collect() };
    let inv_a = g.constant(Array::new(shape.clone(), per(ha))?);
    let scaled_b: Vec<f64> = b.data().iter().zip(per(hb)).map(|(v, s)| v * s).collect();
    let target = g.constant(Array::new(shape, scaled_b)?);
    let sa = g.mul(a, inv_a)?;
    let d = g.sub(sa, target)?;
    let sq = g.square(d);
    let total = g.sum(sq);
    Ok(g.scale(total, 3.0 / b.len() as f64))
}

/// End-effector velocities `[B, T−1, K, 3]` against fixed source values.
pub fn ee_velocity_loss(
    g: &mut Graph,
    target_velocity: NodeId,
    target_chains: &[f64],
    source_velocity: &Array,
    source_chains: &[f64],
) -> Result<NodeId, DiffError> {
    normalized_gap(g, target_velocity, target_chains, source_velocity, source_chains, "ee_velocity_loss")
}

/// End-effector offsets from the rest pose `[B, T, K, 3]` against fixed source values.
pub fn ee_offset_loss(
    g: &mut Graph,
    target_offset: NodeId,
    target_chains: &[f64],
    source_offset: &Array,
    source_chains: &[f64],
) -> Result<NodeId, DiffError> {
    normalized_gap(g, target_offset, target_chains, source_offset, source_chains, "ee_offset_loss")
}

/// Mean of `(|a1| − 1)² + (|a2| − 1)² + (a1·a2)²` over 6D rows `[N, 6]`.
pub fn rot6d_penalty(g: &mut Graph, six: NodeId) -> Result<NodeId, DiffError> {
    let a1 = g.slice(six, 1, 0, 3)?;
    let a2 = g.slice(six, 1, 3, 6)?;
    let mut terms = Vec::new();
    for a in [a1, a2] {
        let len = g.norm2(a)?;
        let one = g.constant(Array::scalar(1.0));
        let d = g.sub(len, one)?;
        terms.push(g.square(d));
    }
    let prod = g.mul(a1, a2)?;
    let dot = g.sum_axis(prod, 1)?;
    terms.push(g.square(dot));
    let a = g.add(terms[0], terms[1])?;
    let b = g.add(a, terms[2])?;
    Ok(g.mean(b))
}

/// Named loss terms, either values or graph nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts<T> {
    pub recon: T,
    pub gan_pose: T,
    pub gan_motion: T,
    pub gp_pose: T,
    pub gp_motion: T,
    pub con: T,
    pub ee: T,
    pub ee_r: T,
    pub rot6d: T,
}

impl<T: Copy> LossParts<T> {
    /// `(weight, term)` pairs whose weighted sum is the total objective.
    pub fn weighted(&self, w: &LossWeights) -> [(f64, T); 9] {
        [
            (w.cycle * w.recon, self.recon),
            (w.cycle * w.gan, self.gan_pose),
            (w.cycle * w.gan, self.gan_motion),
            (w.cycle * w.gp, self.gp_pose),
            (w.cycle * w.gp, self.gp_motion),
            (w.con, self.con),
            (w.ee, self.ee),
            (w.ee_r, self.ee_r),
            (w.rot6d, self.rot6d),
        ]
    }
}

/// `λ_cycle (λ_gan L_adv + λ_GP L_GP + λ_recon L_recon) + λ_con L_con + λ_ee L_ee + λ_ee,r L_ee,r + λ_rot L_rot`.
pub fn total_loss(parts: &LossParts<f64>, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(parts.weighted(w).iter().map(|(k, v)| k * v).sum())
}

/// Graph version of [`total_loss`]; absent terms count as zero.
pub fn total_loss_graph(g: &mut Graph, parts: &LossParts<Option<NodeId>>, w: &LossWeights) -> Result<NodeId> {
    w.validate()?;
    let mut acc: Option<NodeId> = None;
    for (k, term) in parts.weighted(w) {
        let Some(t) = term else { continue };
        if k == 0.0 {
            continue;
        }
        let s = g.scale(t, k);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant(Array::scalar(0.0))))
}

/// Global joint positions `[B, T, J, 3]` of motion channels `[B, 6(J+1)+3, T]`.
pub fn motion_positions_graph(g: &mut Graph, skeleton: &Skeleton, motion: NodeId) -> Result<NodeId> {
    let j = skeleton.joint_count();
    let s = g.shape(motion).to_vec();
    if s.len() != 3 || s[1] != 6 * (j + 1) + 3 {
        return Err(Error::Validation(format!("motion tensor {s:?} does not fit {j} joints")));
    }
    let (b, t) = (s[0], s[2]);
    let frames = g.permute(motion, &[0, 2, 1])?;
    let rows = g.reshape(frames, &[b * t, s[1]])?;
    let pose = g.slice(rows, 1, 0, 6 * j)?;
    let orient = g.slice(rows, 1, 6 * j, 6 * j + 6)?;
    let vel = g.slice(rows, 1, 6 * j + 6, 6 * j + 9)?;
    let vel = g.reshape(vel, &[b, t, 3])?;
    let root = root_positions_graph(g, vel)?;
    let root = g.reshape(root, &[b * t, 3])?;
    let x = forward_kinematics_graph(g, skeleton, pose, orient, root)?;
    Ok(g.reshape(x, &[b, t, j, 3])?)
}

/// Picks joints from `[B, T, J, 3]`.
pub fn select_joints(g: &mut Graph, x: NodeId, joints: &[usize]) -> Result<NodeId, DiffError> {
    let parts: Vec<NodeId> = joints.iter().map(|&k| g.slice(x, 2, k, k + 1)).collect::<Result<_, _>>()?;
    g.concat(&parts, 2)
}

/// Forward differences along the frame axis of `[B, T, ..]`.
pub fn frame_differences(g: &mut Graph, x: NodeId) -> Result<NodeId, DiffError> {
    let t = g.shape(x)[1];
    let next = g.slice(x, 1, 1, t)?;
    let prev = g.slice(x, 1, 0, t - 1)?;
    g.sub(next, prev)
}

/// Subtracts fixed rest positions `[K, 3]` from every frame of `[B, T, K, 3]`.
pub fn rest_offsets(g: &mut Graph, x: NodeId, rest: &[[f64; 3]]) -> Result<NodeId, DiffError> {
    let shape = g.shape(x).to_vec();
    let per = rest.len() * 3;
    let data: Vec<f64> = (0..shape.iter().product::<usize>()).map(|i| rest[(i % per) / 3][i % 3]).collect();
    let r = g.constant(Array::new(shape, data)?);
    g.sub(x, r)
}

/// Channels-first `[1, C, T]` array of a motion.
pub fn motion_tensor(motions: &[&Motion]) -> Result<Array> {
    let first = motions.first().ok_or_else(|| Error::Validation("empty motion batch".into()))?;
    let (t, c) = (first.len(), crate::motion::motion_channels(first.joint_count()));
    let mut data = vec![0.0; motions.len() * c * t];
    for (b, m) in motions.iter().enumerate() {
        if m.len() != t || m.joint_count() != first.joint_count() {
            return Err(Error::Validation("motions in a batch must share length and joint count".into()));
        }
        for (ti, row) in m.to_flat().chunks_exact(c).enumerate() {
            for (ci, v) in row.iter().enumerate() {
                data[(b * c + ci) * t + ti] = *v;
            }
        }
    }
    Ok(Array::new(vec![motions.len(), c, t], data)?)
}

/// Inverse of [`motion_tensor`] for one batch entry.
pub fn tensor_motion(x: &Array, batch: usize, frame_rate: f64) -> Result<Motion> {
    let [_, c, t] = x.shape() else {
        return Err(Error::Validation(format!("expected a [B, C, T] tensor, got {:?}", x.shape())));
    };
    let (c, t) = (*c, *t);
    if (c - 3) % 6 != 0 || c < 9 {
        return Err(Error::Validation(format!("{c} channels do not describe a motion")));
    }
    let mut flat = Vec::with_capacity(c * t);
    for ti in 0..t {
        for ci in 0..c {
            flat.push(x.data()[(batch * c + ci) * t + ti]);
        }
    }
    Motion::from_flat(&flat, (c - 9) / 6, frame_rate)
}
