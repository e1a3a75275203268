//! Source motion windows, the order-free target pose set, and their manifests.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::read_bvh;
use crate::error::{Error, Result};
use crate::motion::{Motion, Pose};
use crate::skeleton::Skeleton;

/// One parsed clip and where it came from.
#[derive(Clone, Debug)]
pub struct Clip {
    pub name: String,
    pub skeleton: Skeleton,
    pub motion: Motion,
}

pub fn load_clips(paths: &[PathBuf]) -> Result<Vec<Clip>> {
    paths
        .iter()
        .map(|p| {
            let (skeleton, motion) = read_bvh(p)?;
            Ok(Clip { name: p.display().to_string(), skeleton, motion })
        })
        .collect()
}

/// Sorted `*.bvh` files directly inside `dir`.
pub fn bvh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn shared_skeleton(clips: &[Clip]) -> Result<Skeleton> {
    let first = clips.first().ok_or_else(|| Error::Validation("no clips given".into()))?;
    for c in &clips[1..] {
        if !c.skeleton.matches(&first.skeleton, 1e-5) {
            return Err(Error::Validation(format!("skeleton of {} differs from {}", c.name, first.name)));
        }
    }
    Ok(first.skeleton.clone())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub clip: String,
    pub start: usize,
}

#[derive(Clone, Debug)]
pub struct MotionDataset {
    pub skeleton: Skeleton,
    pub windows: Vec<Motion>,
    pub refs: Vec<WindowRef>,
    pub window: usize,
    pub stride: usize,
    /// Clips shorter than one window.
    pub skipped: Vec<String>,
}

pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

pub fn build_motion_dataset(clips: &[Clip], window: usize, stride: usize) -> Result<MotionDataset> {
    if window < 2 {
        return Err(Error::Validation(format!("window length must be at least 2, got {window}")));
    }
    if stride == 0 {
        return Err(Error::Validation("window stride must be positive".into()));
    }
    let skeleton = shared_skeleton(clips)?;
    let mut windows = Vec::new();
    let mut refs = Vec::new();
    let mut skipped = Vec::new();
    for c in clips {
        let n = window_count(c.motion.len(), window, stride);
        if n == 0 {
            skipped.push(c.name.clone());
        }
        for k in 0..n {
            windows.push(c.motion.slice(k * stride, window));
            refs.push(WindowRef { clip: c.name.clone(), start: k * stride });
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} clip(s) shorter than {window} frames were skipped", skipped.len());
    }
    Ok(MotionDataset { skeleton, windows, refs, window, stride, skipped })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseRef {
    pub clip: String,
    pub frame: usize,
}

#[derive(Clone, Debug)]
pub struct PoseDataset {
    pub skeleton: Skeleton,
    pub poses: Vec<Pose>,
    pub refs: Vec<PoseRef>,
    pub fraction: f64,
    pub seed: u64,
    /// Frames available before subsampling.
    pub pool_size: usize,
}

impl PoseDataset {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// `⌈f·n⌉`, with a small guard so products like `0.1 · 600` are not pushed up by rounding.
pub fn subsample_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn build_pose_dataset(clips: &[Clip], fraction: f64, seed: u64) -> Result<PoseDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation(format!("subsample fraction must lie in [0, 1], got {fraction}")));
    }
    let skeleton = shared_skeleton(clips)?;
    let mut pool: Vec<(Pose, PoseRef)> = clips
        .iter()
        .flat_map(|c| {
            c.motion
                .frames
                .iter()
                .enumerate()
                .map(|(t, f)| (f.pose.clone(), PoseRef { clip: c.name.clone(), frame: t }))
        })
        .collect();
    let pool_size = pool.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(subsample_size(fraction, pool_size));
    let (poses, refs) = pool.into_iter().unzip();
    Ok(PoseDataset { skeleton, poses, refs, fraction, seed, pool_size })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionManifest {
    pub version: u32,
    pub skeleton_signature: String,
    pub window: usize,
    pub stride: usize,
    pub windows: Vec<WindowRef>,
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseManifest {
    pub version: u32,
    pub skeleton_signature: String,
    pub seed: u64,
    pub fraction: f64,
    pub pool_size: usize,
    pub poses: Vec<PoseRef>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl MotionDataset {
    pub fn manifest(&self) -> MotionManifest {
        MotionManifest {
            version: MANIFEST_VERSION,
            skeleton_signature: self.skeleton.signature(),
            window: self.window,
            stride: self.stride,
            windows: self.refs.clone(),
            skipped: self.skipped.clone(),
        }
    }
}

impl PoseDataset {
    pub fn manifest(&self) -> PoseManifest {
        PoseManifest {
            version: MANIFEST_VERSION,
            skeleton_signature: self.skeleton.signature(),
            seed: self.seed,
            fraction: self.fraction,
            pool_size: self.pool_size,
            poses: self.refs.clone(),
        }
    }
}

impl PoseManifest {
    /// Rebuilds the dataset by reading the referenced clips.
    pub fn load(&self) -> Result<PoseDataset> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!("unsupported manifest version {}", self.version)));
        }
        let mut names: Vec<String> = self.poses.iter().map(|p| p.clip.clone()).collect();
        names.sort();
        names.dedup();
        if names.is_empty() {
            return Err(Error::Validation("pose manifest lists no poses and so names no skeleton".into()));
        }
        let clips = load_clips(&names.iter().map(PathBuf::from).collect::<Vec<_>>())?;
        let skeleton = shared_skeleton(&clips)?;
        if skeleton.signature() != self.skeleton_signature {
            return Err(Error::Validation("pose manifest skeleton signature does not match its files".into()));
        }
        let mut poses = Vec::with_capacity(self.poses.len());
        for r in &self.poses {
            let c = clips.iter().find(|c| c.name == r.clip).expect("clip was loaded");
            let f = c
                .motion
                .frames
                .get(r.frame)
                .ok_or_else(|| Error::Validation(format!("{} has no frame {}", r.clip, r.frame)))?;
            poses.push(f.pose.clone());
        }
        Ok(PoseDataset {
            skeleton,
            poses,
            refs: self.poses.clone(),
            fraction: self.fraction,
            seed: self.seed,
            pool_size: self.pool_size,
        })
    }
}

/// Deterministic split by clip name: the first `⌈f·n⌉` names in sorted order train.
pub fn split_clips(mut clips: Vec<Clip>, train_fraction: f64) -> (Vec<Clip>, Vec<Clip>) {
    clips.sort_by(|a, b| a.name.cmp(&b.name));
    let n = subsample_size(train_fraction, clips.len()).min(clips.len());
    let test = clips.split_off(n);
    (clips, test)
}
