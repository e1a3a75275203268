//! Retargeting quality metrics, pose-set precision/recall and the frame-copy baseline.
//!
//! Positions are divided by the skeleton height before any error is taken.
//! Position errors are per-coordinate mean squares scaled by 1000, jitter is
//! the mean jerk norm per frame³ scaled by 100.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{
    contact_labels, fk_frame, forward_kinematics_full, ContactLabels, Frame, JointPositions, Motion, Pose,
};
use crate::rotation::{self, geodesic_angle, mat_vec, scale, sub, transpose, Vec3, IDENTITY};
use crate::skeleton::Skeleton;

pub const POSITION_SCALE: f64 = 1000.0;
pub const JITTER_SCALE: f64 = 100.0;
/// Retargeted poses kept for precision/recall.
pub const PR_SAMPLES: usize = 8000;
pub const PR_GRID_POINTS: usize = 64;

fn check_pair(skeleton: &Skeleton, a: &Motion, b: &Motion) -> Result<()> {
    a.validate_for(skeleton)?;
    b.validate_for(skeleton)?;
    if a.len() != b.len() {
        return Err(Error::Validation(format!("motions have {} and {} frames", a.len(), b.len())));
    }
    Ok(())
}

fn rotation_err(t: usize) -> impl Fn((usize, rotation::RotationError)) -> Error {
    move |(joint, source)| Error::Rotation { frame: t, joint, source }
}

/// Mean geodesic angle in degrees between corresponding local joint rotations.
pub fn joint_angle_error(skeleton: &Skeleton, retargeted: &Motion, truth: &Motion) -> Result<f64> {
    check_pair(skeleton, retargeted, truth)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, (a, b)) in retargeted.frames.iter().zip(&truth.frames).enumerate() {
        let ra = a.pose.matrices().map_err(rotation_err(t))?;
        let rb = b.pose.matrices().map_err(rotation_err(t))?;
        for (x, y) in ra.iter().zip(&rb) {
            sum += geodesic_angle(y, x).to_degrees();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Joint positions in the frame of joint 0, divided by height, flattened per frame.
fn root_frame_positions(skeleton: &Skeleton, motion: &Motion) -> Result<Vec<f64>> {
    let (pos, rot) = forward_kinematics_full(skeleton, motion)?;
    let j = skeleton.joint_count();
    let h = skeleton.height();
    let mut out = Vec::with_capacity(pos.data().len() * 3);
    for t in 0..pos.frames() {
        let inv = transpose(&rot[t * j]);
        let x0 = pos.get(t, 0);
        for &x in pos.frame(t) {
            out.extend(scale(mat_vec(&inv, sub(x, x0)), 1.0 / h));
        }
    }
    Ok(out)
}

fn pose_features(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<f64>> {
    let (pos, rot) = fk_frame(skeleton, pose, &IDENTITY, [0.0; 3]).map_err(rotation_err(0))?;
    let inv = transpose(&rot[0]);
    let h = skeleton.height();
    Ok(pos.iter().flat_map(|&x| scale(mat_vec(&inv, sub(x, pos[0])), 1.0 / h)).collect())
}

fn scaled_mse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    POSITION_SCALE * s / a.len() as f64
}

/// Position error after removing the global root translation and rotation.
pub fn root_relative_pos_error(skeleton: &Skeleton, retargeted: &Motion, truth: &Motion) -> Result<f64> {
    check_pair(skeleton, retargeted, truth)?;
    Ok(scaled_mse(&root_frame_positions(skeleton, retargeted)?, &root_frame_positions(skeleton, truth)?))
}

/// World positions including the clip origin, divided by height.
fn global_positions(skeleton: &Skeleton, motion: &Motion) -> Result<Vec<f64>> {
    let (pos, _) = forward_kinematics_full(skeleton, motion)?;
    let h = skeleton.height();
    Ok(pos.data().iter().flat_map(|&x| scale(rotation::add(x, motion.origin), 1.0 / h)).collect())
}

pub fn global_pos_error(skeleton: &Skeleton, retargeted: &Motion, truth: &Motion) -> Result<f64> {
    check_pair(skeleton, retargeted, truth)?;
    Ok(scaled_mse(&global_positions(skeleton, retargeted)?, &global_positions(skeleton, truth)?))
}

/// Mean norm of the third frame difference of joint positions.
pub fn jitter_of(positions: &JointPositions, height: f64) -> Result<f64> {
    let t = positions.frames();
    if t < 4 {
        return Err(Error::TooShort { op: "jitter", need: 4, got: t });
    }
    let mut sum = 0.0;
    for f in 0..t - 3 {
        for j in 0..positions.joints() {
            let p = |k: usize| positions.get(f + k, j);
            let d: Vec3 = std::array::from_fn(|c| p(3)[c] - 3.0 * p(2)[c] + 3.0 * p(1)[c] - p(0)[c]);
            sum += rotation::norm(d);
        }
    }
    Ok(JITTER_SCALE * sum / (height * ((t - 3) * positions.joints()) as f64))
}

pub fn jitter(skeleton: &Skeleton, motion: &Motion) -> Result<f64> {
    if motion.len() < 4 {
        return Err(Error::TooShort { op: "jitter", need: 4, got: motion.len() });
    }
    let (pos, _) = forward_kinematics_full(skeleton, motion)?;
    jitter_of(&pos, skeleton.height())
}

/// Fraction of equal entries in two label grids.
pub fn label_agreement(a: &ContactLabels, b: &ContactLabels) -> Result<f64> {
    if a.frames() != b.frames() || a.feet() != b.feet() {
        return Err(Error::Validation(format!(
            "contact labels are {}×{} and {}×{}",
            a.frames(),
            a.feet(),
            b.frames(),
            b.feet()
        )));
    }
    if a.data().is_empty() {
        return Err(Error::Validation("no contact labels to compare".into()));
    }
    let same = a.data().iter().zip(b.data()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.data().len() as f64)
}

/// Share of (frame, foot) pairs whose contact state matches the reference clip.
///
/// `feet` pairs a reference foot joint with the retargeted one.
pub fn contact_consistency(
    skeleton: &Skeleton,
    retargeted: &Motion,
    reference_skeleton: &Skeleton,
    reference: &Motion,
    feet: &[(usize, usize)],
    eps: f64,
) -> Result<f64> {
    if feet.is_empty() {
        return Err(Error::Config("contact consistency needs at least one foot pair".into()));
    }
    if retargeted.len() != reference.len() {
        return Err(Error::Validation(format!("motions have {} and {} frames", retargeted.len(), reference.len())));
    }
    let (ref_feet, ret_feet): (Vec<usize>, Vec<usize>) = feet.iter().copied().unzip();
    let la = contact_labels(&forward_kinematics_full(skeleton, retargeted)?.0, &ret_feet, eps)?;
    let lb = contact_labels(&forward_kinematics_full(reference_skeleton, reference)?.0, &ref_feet, eps)?;
    label_agreement(&la, &lb)
}

/// What a retargeted clip is scored against.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// Ground truth on the same skeleton: every metric applies.
    Truth(&'a Motion),
    /// The source clip on its own skeleton: only jitter and contacts apply.
    Source { skeleton: &'a Skeleton, motion: &'a Motion, feet: &'a [(usize, usize)] },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub frames: usize,
    pub joint_angle: Option<f64>,
    pub root_relative: Option<f64>,
    pub global: Option<f64>,
    pub jitter: Option<f64>,
    pub contact: Option<f64>,
}

impl ClipMetrics {
    fn values(&self) -> [Option<f64>; 5] {
        [self.joint_angle, self.root_relative, self.global, self.jitter, self.contact]
    }
}

pub fn evaluate_clip(
    name: &str,
    skeleton: &Skeleton,
    retargeted: &Motion,
    reference: Reference<'_>,
    eps: f64,
) -> Result<ClipMetrics> {
    let mut m = ClipMetrics { clip: name.to_string(), frames: retargeted.len(), ..Default::default() };
    m.jitter = if retargeted.len() >= 4 { Some(jitter(skeleton, retargeted)?) } else { None };
    match reference {
        Reference::Truth(truth) => {
            m.joint_angle = Some(joint_angle_error(skeleton, retargeted, truth)?);
            m.root_relative = Some(root_relative_pos_error(skeleton, retargeted, truth)?);
            m.global = Some(global_pos_error(skeleton, retargeted, truth)?);
            if !skeleton.feet().is_empty() {
                let feet: Vec<(usize, usize)> = skeleton.feet().iter().map(|&f| (f, f)).collect();
                m.contact = Some(contact_consistency(skeleton, retargeted, skeleton, truth, &feet, eps)?);
            }
        }
        Reference::Source { skeleton: src, motion, feet } => {
            m.contact = Some(contact_consistency(skeleton, retargeted, src, motion, feet, eps)?);
        }
    }
    Ok(m)
}

/// Means over the clips that report each metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub joint_angle: Option<f64>,
    pub root_relative: Option<f64>,
    pub global: Option<f64>,
    pub jitter: Option<f64>,
    pub contact: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub clip_count: usize,
    pub frame_count: usize,
    /// Weighted by clip length; this is the headline value.
    pub mean: MetricMeans,
    pub mean_per_clip: MetricMeans,
}

pub const REPORT_HEADER: &str =
    "clip,frames,joint_angle_deg,root_relative_x1000,global_x1000,jitter_x100,contact_consistency";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn new(clips: Vec<ClipMetrics>) -> Self {
        let mean_by = |weighted: bool| {
            let m: Vec<Option<f64>> = (0..5)
                .map(|k| {
                    let (mut s, mut w) = (0.0, 0.0);
                    for c in &clips {
                        if let Some(v) = c.values()[k] {
                            let wi = if weighted { c.frames as f64 } else { 1.0 };
                            s += wi * v;
                            w += wi;
                        }
                    }
                    (w > 0.0).then(|| s / w)
                })
                .collect();
            MetricMeans { joint_angle: m[0], root_relative: m[1], global: m[2], jitter: m[3], contact: m[4] }
        };
        Self {
            clip_count: clips.len(),
            frame_count: clips.iter().map(|c| c.frames).sum(),
            mean: mean_by(true),
            mean_per_clip: mean_by(false),
            clips,
        }
    }

    /// One row per clip followed by the two mean rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        let mut row = |name: &str, frames: usize, v: [Option<f64>; 5]| {
            s.push_str(&format!("{name},{frames}"));
            for x in v {
                s.push(',');
                s.push_str(&cell(x));
            }
            s.push('\n');
        };
        for c in &self.clips {
            row(&c.clip, c.frames, c.values());
        }
        let means = |m: &MetricMeans| [m.joint_angle, m.root_relative, m.global, m.jitter, m.contact];
        row("mean", self.frame_count, means(&self.mean));
        row("mean_per_clip", self.frame_count, means(&self.mean_per_clip));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Nearest-neighbour coverage of two pose sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Retargeted poses scored.
    pub k: usize,
    pub reference: usize,
}

pub const PR_HEADER: &str = "epsilon,precision,recall";

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{PR_HEADER}\n");
        for ((e, p), r) in self.thresholds.iter().zip(&self.precision).zip(&self.recall) {
            s.push_str(&format!("{e},{p},{r}\n"));
        }
        s
    }

    /// Fraction of grid points where this curve's precision is at least `other`'s.
    pub fn precision_dominance(&self, other: &PrCurve) -> Result<f64> {
        if self.thresholds != other.thresholds {
            return Err(Error::Validation("curves use different threshold grids".into()));
        }
        let wins = self.precision.iter().zip(&other.precision).filter(|(a, b)| a >= b).count();
        Ok(wins as f64 / self.thresholds.len() as f64)
    }
}

/// Root-relative error between two single poses.
pub fn pose_distance(skeleton: &Skeleton, a: &Pose, b: &Pose) -> Result<f64> {
    Ok(scaled_mse(&pose_features(skeleton, a)?, &pose_features(skeleton, b)?))
}

fn features(skeleton: &Skeleton, poses: &[Pose]) -> Result<Vec<Vec<f64>>> {
    poses
        .iter()
        .map(|p| {
            if p.rotations.len() != skeleton.joint_count() {
                return Err(Error::Validation(format!(
                    "pose has {} joints, skeleton has {}",
                    p.rotations.len(),
                    skeleton.joint_count()
                )));
            }
            pose_features(skeleton, p)
        })
        .collect()
}

/// Distance from each pose in `from` to its nearest pose in `to`.
fn nearest(from: &[Vec<f64>], to: &[Vec<f64>]) -> Vec<f64> {
    from.iter().map(|a| to.iter().map(|b| scaled_mse(a, b)).fold(f64::INFINITY, f64::min)).collect()
}

/// Nearest-neighbour distances in both directions: retargeted→reference, reference→retargeted.
pub fn nearest_distances(skeleton: &Skeleton, retargeted: &[Pose], reference: &[Pose]) -> Result<(Vec<f64>, Vec<f64>)> {
    if retargeted.is_empty() || reference.is_empty() {
        return Err(Error::Validation("precision/recall needs two nonempty pose sets".into()));
    }
    let (a, b) = (features(skeleton, retargeted)?, features(skeleton, reference)?);
    Ok((nearest(&a, &b), nearest(&b, &a)))
}

/// Keeps at most `k` poses, chosen by a seeded draw without replacement, in original order.
pub fn subsample_poses(poses: &[Pose], k: usize, seed: u64) -> Vec<Pose> {
    if poses.len() <= k {
        return poses.to_vec();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), poses.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| poses[i].clone()).collect()
}

/// `n` log-spaced thresholds covering the positive values of all `distances`.
pub fn log_grid(distances: &[&[f64]], n: usize) -> Vec<f64> {
    let all = || distances.iter().flat_map(|d| d.iter().copied()).filter(|d| d.is_finite());
    let hi = all().fold(0.0, f64::max);
    if hi <= 0.0 || n < 2 {
        return vec![hi; n.max(1)];
    }
    let lo = all().filter(|&d| d > 0.0).fold(hi, f64::min).max(hi * 1e-9);
    if lo == hi {
        return vec![hi; n];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn cdf(d: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&e| d.iter().filter(|&&x| x <= e).count() as f64 / d.len() as f64).collect()
}

/// Precision and recall on a given `grid`, which must be sorted.
pub fn precision_recall_on(nearest: &(Vec<f64>, Vec<f64>), grid: &[f64]) -> Result<PrCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Validation("threshold grid must be nonempty and sorted".into()));
    }
    let (p, r) = nearest;
    Ok(PrCurve {
        thresholds: grid.to_vec(),
        precision: cdf(p, grid),
        recall: cdf(r, grid),
        k: p.len(),
        reference: r.len(),
    })
}

/// Precision and recall on the default log grid of this pair's own distances.
pub fn precision_recall(skeleton: &Skeleton, retargeted: &[Pose], reference: &[Pose]) -> Result<PrCurve> {
    let nd = nearest_distances(skeleton, retargeted, reference)?;
    let grid = log_grid(&[&nd.0, &nd.1], PR_GRID_POINTS);
    precision_recall_on(&nd, &grid)
}

/// Per-frame retargeting: poses go through `mapper`, the root velocity is
/// scaled by the height ratio and the root orientation is copied.
pub fn baseline_frame_copy<F>(
    source_skeleton: &Skeleton,
    source: &Motion,
    target_skeleton: &Skeleton,
    mapper: F,
) -> Result<Motion>
where
    F: FnOnce(&[Pose]) -> Result<Vec<Pose>>,
{
    source.validate_for(source_skeleton)?;
    let poses: Vec<Pose> = source.frames.iter().map(|f| f.pose.clone()).collect();
    let mapped = mapper(&poses)?;
    if mapped.len() != poses.len() {
        return Err(Error::Validation(format!("mapper returned {} poses for {} frames", mapped.len(), poses.len())));
    }
    let ratio = target_skeleton.height() / source_skeleton.height();
    let frames = source
        .frames
        .iter()
        .zip(mapped)
        .map(|(f, pose)| {
            let mut root = f.root;
            root.velocity = scale(root.velocity, ratio);
            Frame { pose, root }
        })
        .collect();
    let mut out = Motion::new(frames, source.frame_rate)?;
    out.origin = scale(source.origin, ratio);
    out.validate_for(target_skeleton)?;
    Ok(out)
}
