use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::{AdamState, Array, ParamStore};
use crate::error::{Error, Result};
use crate::motion::{motion_channels, Frame, Motion, Pose, RootTransform};
use crate::nets::{ChannelStats, MotionCritic, PoseCritic, SkeletalTopology, SkeletonPair, Translator};
use crate::rotation::Vec3;
use crate::skeleton::Skeleton;

pub const CHECKPOINT_FORMAT: &str = "p2m-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The generator, inverse generator and both critics of one skeleton pair.
#[derive(Clone, Debug)]
pub struct Networks {
    pub source: Skeleton,
    pub target: Skeleton,
    pub pair: SkeletonPair,
    pub stats: ChannelStats,
    pub generator: Translator,
    pub inverse: Translator,
    pub pose_critic: PoseCritic,
    pub motion_critic: MotionCritic,
}

impl Networks {
    pub fn new(source: &Skeleton, target: &Skeleton, stats: ChannelStats, config: &TrainConfig) -> Result<Self> {
        config.arch.validate()?;
        let (js, jt) = (source.joint_count(), target.joint_count());
        if stats.len() != motion_channels(js) {
            return Err(Error::Validation(format!(
                "statistics cover {} channels, source needs {}",
                stats.len(),
                motion_channels(js)
            )));
        }
        let pair = SkeletonPair::new(source, target, config.arch.pool_levels, &config.aliases)?;
        let (ws, wt) = (motion_channels(js), motion_channels(jt));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let arch = &config.arch;
        let generator = Translator::new("g", &pair, arch, stats.standardize(), stats.restore_velocity(wt), &mut rng);
        let inverse = Translator::new(
            "f",
            &pair.swapped(),
            arch,
            stats.standardize_tail(6 * jt, wt),
            stats.restore_velocity(ws),
            &mut rng,
        );
        let pose_critic = PoseCritic::new("dp", jt, arch, &mut rng);
        let motion_critic = MotionCritic::new("dm", &SkeletalTopology::augmented(source), arch, &mut rng);
        Ok(Self {
            source: source.clone(),
            target: target.clone(),
            pair,
            stats,
            generator,
            inverse,
            pose_critic,
            motion_critic,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.stores().iter().map(|s| s.scalar_count()).sum()
    }

    pub fn stores(&self) -> [&ParamStore; 4] {
        [&self.generator.params, &self.inverse.params, &self.pose_critic.params, &self.motion_critic.params]
    }

    /// Translates a whole source clip to the target skeleton.
    pub fn retarget(&self, motion: &Motion) -> Result<Motion> {
        motion.validate_for(&self.source)?;
        let x = super::motion_tensor(&[motion])?;
        let y = self.generator.apply(&x)?;
        let mut out = super::tensor_motion(&y, 0, motion.frame_rate)?;
        let ground = |s: &Skeleton| -s.rest_positions().iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        out.origin = motion.origin;
        out.origin[1] += ground(&self.target) - ground(&self.source);
        Ok(out)
    }

    /// Maps single source poses through the generator, pairing each with an
    /// identity root. Used as the per-frame mapper of the frame-level baseline.
    pub fn map_poses(&self, poses: &[Pose]) -> Result<Vec<Pose>> {
        if poses.is_empty() {
            return Ok(Vec::new());
        }
        let frames: Vec<Frame> =
            poses.iter().map(|p| Frame { pose: p.clone(), root: RootTransform::default() }).collect();
        let m = Motion::new(frames, 30.0)?;
        let single: Vec<Motion> = (0..m.len()).map(|t| m.slice(t, 1)).collect();
        let refs: Vec<&Motion> = single.iter().collect();
        let x = super::motion_tensor(&refs)?;
        let y = self.generator.apply(&x)?;
        (0..poses.len()).map(|b| Ok(super::tensor_motion(&y, b, 30.0)?.frames.remove(0).pose)).collect()
    }
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub con: f64,
    pub ee: f64,
    pub ee_r: f64,
    pub gan_pose_g: f64,
    pub gan_motion_g: f64,
    pub critic_pose: f64,
    pub critic_motion: f64,
    pub gp_pose: f64,
    pub gp_motion: f64,
    pub rot6d: f64,
}

pub const HISTORY_HEADER: &str =
    "step,total,recon,con,ee,ee_r,gan_pose_g,gan_motion_g,critic_pose,critic_motion,gp_pose,gp_motion,rot6d";

impl HistoryRow {
    pub fn values(&self) -> [f64; 12] {
        [
            self.total,
            self.recon,
            self.con,
            self.ee,
            self.ee_r,
            self.gan_pose_g,
            self.gan_motion_g,
            self.critic_pose,
            self.critic_motion,
            self.gp_pose,
            self.gp_motion,
            self.rot6d,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    fn csv(&self) -> String {
        let mut s = self.step.to_string();
        for v in self.values() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return None;
        }
        let v: Vec<f64> = f[1..].iter().map(|x| x.parse().ok()).collect::<Option<_>>()?;
        Some(Self {
            step: f[0].parse().ok()?,
            total: v[0],
            recon: v[1],
            con: v[2],
            ee: v[3],
            ee_r: v[4],
            gan_pose_g: v[5],
            gan_motion_g: v[6],
            critic_pose: v[7],
            critic_motion: v[8],
            gp_pose: v[9],
            gp_motion: v[10],
            rot6d: v[11],
        })
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_atomic(path, history_csv(rows).as_bytes())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Validation(format!("{}: unexpected history header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            HistoryRow::parse(l).ok_or_else(|| Error::Validation(format!("{}: bad row {}", path.display(), i + 2)))
        })
        .collect()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub source: Skeleton,
    pub target: Skeleton,
    pub stats: ChannelStats,
    pub generator: ParamStore,
    pub inverse: ParamStore,
    pub pose_critic: ParamStore,
    pub motion_critic: ParamStore,
    pub optimizers: [AdamState; 4],
    pub history: Vec<HistoryRow>,
}

fn load_store(dst: &mut ParamStore, src: &ParamStore, what: &str) -> Result<()> {
    let same = dst.names() == src.names() && dst.values().iter().zip(src.values()).all(|(a, b)| a.shape() == b.shape());
    if !same {
        return Err(Error::Validation(format!("checkpoint {what} parameters do not fit the configured architecture")));
    }
    for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
        *d = s.clone();
    }
    Ok(())
}

impl Checkpoint {
    pub fn networks(&self) -> Result<Networks> {
        let mut n = Networks::new(&self.source, &self.target, self.stats.clone(), &self.config)?;
        load_store(&mut n.generator.params, &self.generator, "generator")?;
        load_store(&mut n.inverse.params, &self.inverse, "inverse generator")?;
        load_store(&mut n.pose_critic.params, &self.pose_critic, "pose critic")?;
        load_store(&mut n.motion_critic.params, &self.motion_critic, "motion critic")?;
        Ok(n)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Json { path: "<checkpoint>".into(), source: e })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                c.format,
                c.version
            )));
        }
        Ok(c)
    }
}

/// Rest positions of `joints`.
pub(crate) fn rest_of(skeleton: &Skeleton, joints: &[usize]) -> Vec<Vec3> {
    let rest = skeleton.rest_positions();
    joints.iter().map(|&j| rest[j]).collect()
}

/// Chain lengths aligned with `joints`, which must be end-effectors.
pub(crate) fn chains_of(skeleton: &Skeleton, joints: &[usize]) -> Vec<f64> {
    joints
        .iter()
        .map(|j| {
            let k = skeleton.end_effectors().iter().position(|e| e == j).expect("end-effector");
            skeleton.chain_lengths()[k]
        })
        .collect()
}

pub(crate) fn stack(rows: &[&Array]) -> Result<Array> {
    let first = rows.first().ok_or_else(|| Error::Validation("empty batch".into()))?;
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(first.shape());
    let data = rows.iter().flat_map(|a| a.data().iter().copied()).collect();
    Ok(Array::new(shape, data)?)
}
