//! Skeleton-aware operators and the four networks of the retargeting cycle.
//!
//! Features live on the nodes of a [`SkeletalTopology`]: the skeleton's joints
//! plus an armature node that carries the root transform. Convolutions mix only
//! nodes within a graph distance, pooling collapses joint chains onto a reduced
//! tree shared by the source and target skeletons, and the translators map
//! motion between the two through that reduced tree.

mod critics;
mod generator;
mod layers;
mod topology;

pub use critics::{MotionCritic, PoseCritic};
pub use generator::{raw_channels, rest_bias, Translator};
pub use layers::{Affine, ConvSpec, Resample, SkeletalConv};
pub use topology::{Hierarchy, Pooling, SkeletalTopology, SkeletonPair, ARMATURE, ROOT_KEY};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Motion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Graph radius of every skeletal convolution.
    pub neighbor_distance: usize,
    /// Temporal taps, odd.
    pub kernel: usize,
    pub slope: f64,
    pub pool_levels: usize,
    /// Hidden channels per node.
    pub channels: usize,
    /// Channels per node of the shared reduced tree.
    pub latent: usize,
    pub critic_hidden: usize,
    pub critic_channels: usize,
    /// Init scale of the output heads relative to the default bound.
    pub head_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            neighbor_distance: 2,
            kernel: 15,
            slope: 0.2,
            pool_levels: 2,
            channels: 32,
            latent: 64,
            critic_hidden: 32,
            critic_channels: 16,
            head_init: 0.1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("arch.kernel must be odd, got {}", self.kernel));
        }
        if self.pool_levels == 0 {
            return bad("arch.pool_levels must be at least 1".into());
        }
        if self.channels == 0 || self.latent == 0 || self.critic_hidden == 0 || self.critic_channels == 0 {
            return bad("arch channel counts must be positive".into());
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return bad(format!("arch.slope must be nonnegative, got {}", self.slope));
        }
        if !(self.head_init.is_finite() && self.head_init >= 0.0) {
            return bad(format!("arch.head_init must be nonnegative, got {}", self.head_init));
        }
        Ok(())
    }
}

/// Smallest spread used when standardizing a channel.
pub const STD_FLOOR: f64 = 1e-2;

/// Per-channel mean and floored standard deviation of flattened motion frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn of_motions(motions: &[Motion]) -> Result<Self> {
        let first = motions.first().ok_or_else(|| Error::Validation("statistics need at least one motion".into()))?;
        let c = crate::motion::motion_channels(first.joint_count());
        let mut sum = vec![0.0; c];
        let mut n = 0usize;
        for m in motions {
            for row in m.to_flat().chunks_exact(c) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; c];
        for m in motions {
            for row in m.to_flat().chunks_exact(c) {
                for ((q, v), mu) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (v - mu) * (v - mu);
                }
            }
        }
        let std = sq.iter().map(|q| (q / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize(&self) -> Affine {
        Affine::standardize(&self.mean, &self.std)
    }

    /// Keeps the first `keep` channels as they are and standardizes the rest.
    pub fn standardize_tail(&self, keep: usize, width: usize) -> Affine {
        let mut a = Affine::identity(width);
        let full = self.standardize();
        let tail = self.len() - (width - keep);
        for c in keep..width {
            a.scale[c] = full.scale[tail + c - keep];
            a.shift[c] = full.shift[tail + c - keep];
        }
        a
    }

    /// Identity on rotation channels, restores the trailing velocity channels.
    pub fn restore_velocity(&self, width: usize) -> Affine {
        let mut a = Affine::identity(width);
        for k in 0..3 {
            a.scale[width - 3 + k] = self.std[self.len() - 3 + k];
            a.shift[width - 3 + k] = self.mean[self.len() - 3 + k];
        }
        a
    }
}
