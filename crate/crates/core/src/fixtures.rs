//! Procedural walking clips for two homeomorphic bipeds.
//!
//! The eight-joint source walks like an inverted pendulum on rigid one-bone
//! legs, the twelve-joint target on bent two-bone legs solved by IK. In both,
//! a stance foot is exactly fixed for half a gait cycle, so the contact
//! schedule is known in closed form.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::write_bvh;
use crate::error::{Error, Result};
use crate::motion::{Frame, Motion, Pose, RootTransform};
use crate::rotation::{add, mat_vec, matrix_to_rot6d, rot_x, rot_y, rot_z, scale, sub, Mat3, Vec3, IDENTITY};
use crate::skeleton::{Joint, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureSkeleton {
    /// Hips, two one-bone legs, head and hands on the hips.
    Biped8,
    /// Hips, two two-bone legs, neck and head, a left arm and a right hand.
    Biped12,
    /// `Biped12` without the right hand; not homeomorphic to the others.
    Biped11,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub source: FixtureSkeleton,
    pub target: FixtureSkeleton,
    pub source_clips: usize,
    pub target_clips: usize,
    pub source_frames: usize,
    pub target_frames: usize,
    pub frame_rate: f64,
    /// Nominal gait cycle in frames; each clip varies it by up to ±12%.
    pub period: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            source: FixtureSkeleton::Biped8,
            target: FixtureSkeleton::Biped12,
            source_clips: 10,
            target_clips: 6,
            source_frames: 120,
            target_frames: 100,
            frame_rate: 30.0,
            period: 32.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixtureClip {
    pub name: String,
    pub skeleton: Skeleton,
    pub motion: Motion,
    /// `planted[t][k]`: foot `k` of the skeleton's foot set stays exactly fixed between frames `t` and `t+1`.
    pub planted: Vec<Vec<bool>>,
}

impl FixtureClip {
    pub fn bvh(&self) -> Result<String> {
        write_bvh(&self.skeleton, &self.motion)
    }
}

#[derive(Clone, Debug)]
pub struct FixtureCorpus {
    pub source: Vec<FixtureClip>,
    pub target: Vec<FixtureClip>,
}

impl FixtureCorpus {
    /// Writes `source/*.bvh` and `target/*.bvh` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (sub_dir, clips) in [("source", &self.source), ("target", &self.target)] {
            let d = dir.join(sub_dir);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for c in clips {
                let p = d.join(&c.name);
                std::fs::write(&p, c.bvh()?).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }
}

fn joint(name: &str, parent: Option<usize>, offset: Vec3, end: Option<Vec3>) -> Joint {
    Joint { name: name.into(), parent, offset, end_site: end }
}

const SRC_LEG: f64 = 45.0;
const SRC_HIP: f64 = 10.0;
const TGT_HIP: Vec3 = [0.0, -6.0, 12.0];
const TGT_THIGH: f64 = 32.0;
const TGT_SHIN: f64 = 30.0;

/// Skeleton in file units (centimetre-like).
pub fn fixture_skeleton(kind: FixtureSkeleton) -> Skeleton {
    let joints = match kind {
        FixtureSkeleton::Biped8 => vec![
            joint("Hips", None, [0.0; 3], None),
            joint("LeftUpLeg", Some(0), [0.0, 0.0, SRC_HIP], None),
            joint("LeftFoot", Some(1), [0.0, -SRC_LEG, 0.0], Some([6.0, 0.0, 0.0])),
            joint("RightUpLeg", Some(0), [0.0, 0.0, -SRC_HIP], None),
            joint("RightFoot", Some(3), [0.0, -SRC_LEG, 0.0], Some([6.0, 0.0, 0.0])),
            joint("Head", Some(0), [0.0, 40.0, 0.0], Some([0.0, 10.0, 0.0])),
            joint("LeftHand", Some(0), [0.0, 22.0, 22.0], Some([0.0, -4.0, 0.0])),
            joint("RightHand", Some(0), [0.0, 22.0, -22.0], Some([0.0, -4.0, 0.0])),
        ],
        FixtureSkeleton::Biped12 | FixtureSkeleton::Biped11 => {
            let mut v = vec![
                joint("Hips", None, [0.0; 3], None),
                joint("LeftUpLeg", Some(0), TGT_HIP, None),
                joint("LeftLeg", Some(1), [0.0, -TGT_THIGH, 0.0], None),
                joint("LeftFoot", Some(2), [0.0, -TGT_SHIN, 0.0], Some([8.0, -4.0, 0.0])),
                joint("RightUpLeg", Some(0), [TGT_HIP[0], TGT_HIP[1], -TGT_HIP[2]], None),
                joint("RightLeg", Some(4), [0.0, -TGT_THIGH, 0.0], None),
                joint("RightFoot", Some(5), [0.0, -TGT_SHIN, 0.0], Some([8.0, -4.0, 0.0])),
                joint("Neck", Some(0), [0.0, 30.0, 0.0], None),
                joint("Head", Some(7), [0.0, 14.0, 0.0], Some([0.0, 12.0, 0.0])),
                joint("LeftShoulder", Some(0), [0.0, 26.0, 14.0], None),
                joint("LeftHand", Some(9), [0.0, -28.0, 4.0], Some([0.0, -6.0, 0.0])),
                joint("RightHand", Some(0), [0.0, 24.0, -20.0], Some([0.0, -6.0, 0.0])),
            ];
            if kind == FixtureSkeleton::Biped11 {
                v.pop();
            }
            v
        }
    };
    Skeleton::new(joints, None, None).expect("fixture skeletons are valid")
}

/// Per-clip gait parameters.
#[derive(Clone, Copy, Debug)]
struct Gait {
    half_period: f64,
    phase: f64,
    /// Source: leg swing amplitude (rad). Target: step length (file units).
    stride: f64,
    /// Source: hip yaw amplitude (deg). Target: knee-bend factor on hip height.
    sway: f64,
    /// Swing-foot clearance: abduction (deg) for the source, lift height for the target.
    lift: f64,
    /// Secondary motion amplitude in degrees (head nod, arm swing).
    accent: f64,
}

/// One sampled state: root position, root rotation, local joint rotations.
type State = (Vec3, Mat3, Vec<Mat3>);

fn source_state(g: &Gait, t: f64) -> State {
    let u = t / g.half_period + g.phase;
    let k = u.floor();
    let s = u - k;
    let left_stance = (k as i64) % 2 == 0;
    let a = g.stride;
    let phi = a * (1.0 - 2.0 * s);
    let yaw = g.sway * (std::f64::consts::PI * u).sin();
    let root_rot = rot_y(yaw);
    let side = if left_stance { 1.0 } else { -1.0 };
    let foot = [k * 2.0 * SRC_LEG * a.sin(), 0.0, side * SRC_HIP];
    let leg = [SRC_LEG * phi.sin(), -SRC_LEG * phi.cos(), 0.0];
    let root = sub(foot, mat_vec(&root_rot, add([0.0, 0.0, side * SRC_HIP], leg)));

    let lift = g.lift * (std::f64::consts::PI * s).sin();
    let stance = rot_z(phi.to_degrees());
    let swing = |outward: f64| crate::rotation::mat_mul(&rot_z(-phi.to_degrees()), &rot_x(outward * lift));
    // Rx by a positive angle swings a foot towards -Z: outward for the right leg.
    let (l_leg, l_ang, r_leg, r_ang) =
        if left_stance { (stance, phi, swing(1.0), -phi) } else { (swing(-1.0), -phi, stance, phi) };
    let nod = rot_x(g.accent * (2.0 * std::f64::consts::PI * u).sin());
    let locals =
        vec![IDENTITY, l_leg, rot_z(-l_ang.to_degrees()), r_leg, rot_z(-r_ang.to_degrees()), nod, IDENTITY, IDENTITY];
    (root, root_rot, locals)
}

/// Planar two-bone IK; returns the thigh and shin angles about Z.
fn two_bone(hip: Vec3, target: Vec3) -> (f64, f64) {
    let (a, b) = (TGT_THIGH, TGT_SHIN);
    let dx = target[0] - hip[0];
    let dy = target[1] - hip[1];
    let d = (dx * dx + dy * dy).sqrt().min(a + b - 1e-6);
    let (ux, uy) = (dx / d, dy / d);
    let p = (a * a - b * b + d * d) / (2.0 * d);
    let q = (a * a - p * p).max(0.0).sqrt();
    // Knee bends forward, towards +X.
    let (nx, ny) = (-uy, ux);
    let knee = [hip[0] + p * ux + q * nx, hip[1] + p * uy + q * ny];
    let thigh = (knee[0] - hip[0]).atan2(-(knee[1] - hip[1]));
    let shin = (hip[0] + dx - knee[0]).atan2(-(hip[1] + dy - knee[1]));
    (thigh, shin)
}

fn target_root_height(g: &Gait) -> f64 {
    g.sway * (TGT_THIGH + TGT_SHIN - TGT_HIP[1])
}

fn target_state(g: &Gait, t: f64, joints: usize) -> State {
    let u = t / g.half_period + g.phase;
    let k = u.floor();
    let s = u - k;
    let left_stance = (k as i64) % 2 == 0;
    let step = g.stride;
    let root = [step * u, target_root_height(g), 0.0];
    let planted_x = step * k + step / 2.0;
    let ease = (1.0 - (std::f64::consts::PI * s).cos()) / 2.0;
    let swing_x = step * (k - 1.0) + step / 2.0 + 2.0 * step * ease;
    let swing_y = g.lift * (std::f64::consts::PI * s).sin();
    let (l_foot, r_foot) = if left_stance {
        ([planted_x, 0.0, TGT_HIP[2]], [swing_x, swing_y, -TGT_HIP[2]])
    } else {
        ([swing_x, swing_y, TGT_HIP[2]], [planted_x, 0.0, -TGT_HIP[2]])
    };
    let l_hip = add(root, TGT_HIP);
    let r_hip = add(root, [TGT_HIP[0], TGT_HIP[1], -TGT_HIP[2]]);
    let (lt, ls) = two_bone(l_hip, l_foot);
    let (rt, rs) = two_bone(r_hip, r_foot);
    let deg = f64::to_degrees;
    let w = 2.0 * std::f64::consts::PI * u / 2.0;
    let mut locals = vec![
        IDENTITY,
        rot_z(deg(lt)),
        rot_z(deg(ls - lt)),
        rot_z(deg(-ls)),
        rot_z(deg(rt)),
        rot_z(deg(rs - rt)),
        rot_z(deg(-rs)),
        rot_z(0.3 * g.accent * (2.0 * w).sin()),
        rot_x(0.5 * g.accent * w.sin()),
        rot_z(-g.accent * w.sin()),
        IDENTITY,
        IDENTITY,
    ];
    locals.truncate(joints);
    (root, IDENTITY, locals)
}

fn sample_gait(rng: &mut ChaCha8Rng, kind: FixtureSkeleton, period: f64) -> Gait {
    let half_period = period * rng.gen_range(0.88..1.12) / 2.0;
    let phase = rng.gen_range(0.0..2.0);
    match kind {
        FixtureSkeleton::Biped8 => Gait {
            half_period,
            phase,
            stride: rng.gen_range(0.30..0.45),
            sway: rng.gen_range(3.0..8.0),
            lift: rng.gen_range(8.0..14.0),
            accent: rng.gen_range(2.0..5.0),
        },
        FixtureSkeleton::Biped12 | FixtureSkeleton::Biped11 => {
            let bend = rng.gen_range(0.86..0.92);
            let hip_h = bend * (TGT_THIGH + TGT_SHIN - TGT_HIP[1]) + TGT_HIP[1];
            let reach = 0.97 * (TGT_THIGH + TGT_SHIN);
            let max_half = (reach * reach - hip_h * hip_h).max(0.0).sqrt();
            Gait {
                half_period,
                phase,
                stride: 2.0 * max_half * rng.gen_range(0.6..0.85),
                sway: bend,
                lift: rng.gen_range(4.0..8.0),
                accent: rng.gen_range(10.0..25.0),
            }
        }
    }
}

/// Indices into the stance schedule: whether foot `side` (0 left, 1 right) is
/// planted over the whole frame gap `[t, t+1]`.
fn planted_gap(g: &Gait, t: usize, side: usize) -> bool {
    let u0 = t as f64 / g.half_period + g.phase;
    let u1 = (t + 1) as f64 / g.half_period + g.phase;
    let k = u0.floor();
    let stance_side = if (k as i64) % 2 == 0 { 0 } else { 1 };
    stance_side == side && u1 <= k + 1.0
}

fn clip(name: String, kind: FixtureSkeleton, g: &Gait, frames: usize, frame_rate: f64) -> Result<FixtureClip> {
    let file_skeleton = fixture_skeleton(kind);
    let n = file_skeleton.joint_count();
    let states: Vec<State> = (0..=frames)
        .map(|t| match kind {
            FixtureSkeleton::Biped8 => source_state(g, t as f64),
            _ => target_state(g, t as f64, n),
        })
        .collect();
    let h = file_skeleton.height();
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let (root, root_rot, locals) = &states[t];
        let rotations = locals.iter().map(|m| matrix_to_rot6d(m).expect("fixture rotations are orthonormal")).collect();
        out.push(Frame {
            pose: Pose { rotations },
            root: RootTransform {
                orientation: matrix_to_rot6d(root_rot).expect("fixture rotations are orthonormal"),
                velocity: scale(sub(states[t + 1].0, *root), 1.0 / h),
            },
        });
    }
    let mut motion = Motion::new(out, frame_rate)?;
    motion.origin = scale(states[0].0, 1.0 / h);
    let skeleton = file_skeleton.normalized()?;
    let feet: Vec<usize> = skeleton.feet().to_vec();
    let planted = (0..frames.saturating_sub(1))
        .map(|t| {
            feet.iter()
                .map(|&f| {
                    let side = if skeleton.name(f).starts_with("Left") { 0 } else { 1 };
                    planted_gap(g, t, side)
                })
                .collect()
        })
        .collect();
    Ok(FixtureClip { name, skeleton, motion, planted })
}

/// A clip that holds one gait pose and alternates `hold` still frames with
/// `hold` frames of steady travel at `speed` heights per frame. Every foot is
/// bit-exactly static while still, so the contact schedule has no borderline frames.
pub fn stop_and_go_clip(
    kind: FixtureSkeleton,
    frames: usize,
    hold: usize,
    speed: f64,
    seed: u64,
) -> Result<FixtureClip> {
    if frames < 2 || hold == 0 || !(speed.is_finite() && speed > 0.0) {
        return Err(Error::Config("stop-and-go clips need 2+ frames, a positive hold and a positive speed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample_gait(&mut rng, kind, 32.0);
    let file_skeleton = fixture_skeleton(kind);
    let (_, root_rot, locals) = match kind {
        FixtureSkeleton::Biped8 => source_state(&g, rng.gen_range(0.0..32.0)),
        _ => target_state(&g, rng.gen_range(0.0..32.0), file_skeleton.joint_count()),
    };
    let pose = Pose {
        rotations: locals.iter().map(|m| matrix_to_rot6d(m).expect("fixture rotations are orthonormal")).collect(),
    };
    let orientation = matrix_to_rot6d(&root_rot).expect("fixture rotations are orthonormal");
    let moving = |t: usize| (t / hold) % 2 == 1;
    let out = (0..frames)
        .map(|t| Frame {
            pose: pose.clone(),
            root: RootTransform { orientation, velocity: if moving(t) { [speed, 0.0, 0.0] } else { [0.0; 3] } },
        })
        .collect();
    let motion = Motion::new(out, 30.0)?;
    let skeleton = file_skeleton.normalized()?;
    let planted = (0..frames - 1).map(|t| vec![!moving(t); skeleton.feet().len()]).collect();
    Ok(FixtureClip { name: "stop_and_go.bvh".into(), skeleton, motion, planted })
}

pub fn generate_fixture_corpus(spec: &FixtureSpec, seed: u64) -> Result<FixtureCorpus> {
    let (s, t) = (fixture_skeleton(spec.source), fixture_skeleton(spec.target));
    if s.end_effector_names() != t.end_effector_names() {
        return Err(Error::Config(format!(
            "fixture skeletons are not homeomorphic: end-effectors {:?} vs {:?}",
            s.end_effector_names(),
            t.end_effector_names()
        )));
    }
    if spec.source_frames < 2 || spec.target_frames < 2 {
        return Err(Error::Config("fixture clips need at least 2 frames".into()));
    }
    if !(spec.period >= 4.0 && spec.frame_rate > 0.0) {
        return Err(Error::Config("fixture period must be at least 4 frames and frame rate positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = Vec::with_capacity(spec.source_clips);
    for i in 0..spec.source_clips {
        let g = sample_gait(&mut rng, spec.source, spec.period);
        source.push(clip(format!("walk_{i:03}.bvh"), spec.source, &g, spec.source_frames, spec.frame_rate)?);
    }
    let mut target = Vec::with_capacity(spec.target_clips);
    for i in 0..spec.target_clips {
        let g = sample_gait(&mut rng, spec.target, spec.period);
        target.push(clip(format!("walk_{i:03}.bvh"), spec.target, &g, spec.target_frames, spec.frame_rate)?);
    }
    Ok(FixtureCorpus { source, target })
}
