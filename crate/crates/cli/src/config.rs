//! The run configuration file.

use std::path::{Path, PathBuf};

use pose2motion::fixtures::FixtureSpec;
use pose2motion::skeleton::Skeleton;
use pose2motion::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of source `.bvh` clips.
    pub source_dir: PathBuf,
    /// Directory of target `.bvh` files whose frames form the pose set.
    pub target_dir: PathBuf,
    /// Pose manifest written by `prepare`; used instead of `target_dir` when set.
    pub target_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Checkpoint for `retarget`, `baseline`; defaults to `<output_dir>/train/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            source_dir: "data/source".into(),
            target_dir: "data/target".into(),
            target_manifest: None,
            output_dir: "runs/default".into(),
            checkpoint: None,
        }
    }
}

/// Joint names overriding the detected end-effector and foot sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointSets {
    pub end_effectors: Option<Vec<String>>,
    pub feet: Option<Vec<String>>,
}

impl JointSets {
    pub fn apply(&self, skeleton: &Skeleton) -> Result<Skeleton, CliError> {
        if self.end_effectors.is_none() && self.feet.is_none() {
            return Ok(skeleton.clone());
        }
        let resolve = |names: &[String]| -> Result<Vec<usize>, CliError> {
            names
                .iter()
                .map(|n| skeleton.find(n).ok_or_else(|| CliError::Validation(format!("no joint named {n:?}"))))
                .collect()
        };
        let ee = match &self.end_effectors {
            Some(n) => resolve(n)?,
            None => skeleton.end_effectors().to_vec(),
        };
        let feet = match &self.feet {
            Some(n) => resolve(n)?,
            None => skeleton.feet().to_vec(),
        };
        Ok(skeleton.with_sets(ee, feet)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonSets {
    pub source: JointSets,
    pub target: JointSets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub window: usize,
    pub stride: usize,
    /// Fraction of target frames kept in the pose set.
    pub pose_fraction: f64,
    pub pose_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { window: 64, stride: 16, pose_fraction: 1.0, pose_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub seed: u64,
    pub spec: FixtureSpec,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self { seed: 7, spec: FixtureSpec::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Files on the retargeted skeleton; every metric is computed.
    #[default]
    Truth,
    /// The source clips; only jitter and contact consistency apply.
    Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Defaults to `<output_dir>/retargeted`.
    pub retargeted_dir: Option<PathBuf>,
    /// Files matched by name; defaults to `paths.source_dir` for `source`, `paths.target_dir` for `truth`.
    pub reference_dir: Option<PathBuf>,
    pub reference: ReferenceKind,
    /// Stem of the written `.csv` and `.json` report.
    pub report: String,
    /// Stem of the written precision/recall CSV.
    pub pr_report: String,
    pub pr_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            retargeted_dir: None,
            reference_dir: None,
            reference: ReferenceKind::Truth,
            report: "report".into(),
            pr_report: "pr".into(),
            pr_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub skeletons: SkeletonSets,
    pub data: DataConfig,
    pub training: TrainConfig,
    pub fixtures: FixtureConfig,
    pub evaluation: EvalConfig,
}

impl RunConfig {
    /// Parses JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Validation(format!("config field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate()?;
        if self.data.window < 2 || self.data.stride == 0 {
            return Err(CliError::Validation("data.window must be at least 2 and data.stride positive".into()));
        }
        if !(0.0..=1.0).contains(&self.data.pose_fraction) {
            return Err(CliError::Validation(format!(
                "data.pose_fraction must lie in [0, 1], got {}",
                self.data.pose_fraction
            )));
        }
        if self.evaluation.report.is_empty() || self.evaluation.pr_report.is_empty() {
            return Err(CliError::Validation("evaluation report names must be nonempty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.train_dir().join(pose2motion::training::CHECKPOINT_FILE))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.paths.output_dir.join("train")
    }

    pub fn retargeted_dir(&self) -> PathBuf {
        self.evaluation.retargeted_dir.clone().unwrap_or_else(|| self.paths.output_dir.join("retargeted"))
    }

    pub fn reference_dir(&self) -> PathBuf {
        self.evaluation.reference_dir.clone().unwrap_or_else(|| match self.evaluation.reference {
            ReferenceKind::Truth => self.paths.target_dir.clone(),
            ReferenceKind::Source => self.paths.source_dir.clone(),
        })
    }
}
