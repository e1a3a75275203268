//! Loss terms and the asymmetric cycle training loop.

mod losses;
mod penalty;
mod state;
mod trainer;

pub use losses::{
    contact_loss, ee_offset_loss, ee_velocity_loss, frame_differences, motion_positions_graph, motion_tensor,
    reconstruction_loss, rest_offsets, rot6d_penalty, select_joints, tensor_motion, total_loss, total_loss_graph,
    wgan_losses, Correspondence, LossParts,
};
pub use penalty::{gradient_penalty, interpolate, PenaltyHead};
pub use state::{
    history_csv, read_history_csv, write_atomic, write_history_csv, Checkpoint, HistoryRow, Networks,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION, HISTORY_HEADER,
};
pub use trainer::{motion_pair_losses, train, PairLosses, TrainOutcome, Trainer, CHECKPOINT_FILE, HISTORY_FILE};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::nets::ArchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cycle: f64,
    /// Adversarial terms inside the cycle loss; 0 disables both critics.
    pub gan: f64,
    pub gp: f64,
    pub recon: f64,
    pub con: f64,
    pub ee: f64,
    pub ee_r: f64,
    /// Keeps generated 6D rows near orthonormal.
    pub rot6d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cycle: 1.0, gan: 1.0, gp: 10.0, recon: 10.0, con: 5.0, ee: 2.0, ee_r: 2.0, rot6d: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("cycle", self.cycle),
            ("gan", self.gan),
            ("gp", self.gp),
            ("recon", self.recon),
            ("con", self.con),
            ("ee", self.ee),
            ("ee_r", self.ee_r),
            ("rot6d", self.rot6d),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weight {name} must be a nonnegative number, got {v}")));
        }
        if all.iter().all(|(_, v)| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn adversarial(&self) -> bool {
        self.gan > 0.0 && self.cycle > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub pose_batch: usize,
    pub n_critic: usize,
    pub seed: u64,
    /// Foot speed below which a frame counts as contact, in heights per frame.
    pub contact_eps: f64,
    pub weights: LossWeights,
    pub arch: ArchConfig,
    pub optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Target joint names mapped to the source names they correspond to.
    pub aliases: BTreeMap<String, String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            pose_batch: 64,
            n_critic: 5,
            seed: 0,
            contact_eps: crate::motion::DEFAULT_CONTACT_EPS,
            weights: LossWeights::default(),
            arch: ArchConfig::default(),
            optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            checkpoint_every: 1000,
            aliases: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.arch.validate()?;
        if self.batch_size == 0 || self.pose_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be positive".into()));
        }
        if !(self.contact_eps.is_finite() && self.contact_eps > 0.0) {
            return Err(Error::Config(format!("contact_eps must be positive, got {}", self.contact_eps)));
        }
        for (name, o) in [("optimizer", &self.optimizer), ("critic_optimizer", &self.critic_optimizer)] {
            let ok = o.lr.is_finite()
                && o.lr > 0.0
                && (0.0..1.0).contains(&o.beta1)
                && (0.0..1.0).contains(&o.beta2)
                && o.eps.is_finite()
                && o.eps > 0.0;
            if !ok {
                return Err(Error::Config(format!("{name} settings are out of range: {o:?}")));
            }
        }
        Ok(())
    }
}
