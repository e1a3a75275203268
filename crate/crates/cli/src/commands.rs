use std::path::{Path, PathBuf};

use pose2motion::bvh::{read_bvh, write_bvh_file};
use pose2motion::dataset::{build_motion_dataset, build_pose_dataset, bvh_files, Clip, PoseDataset, PoseManifest};
use pose2motion::fixtures::generate_fixture_corpus;
use pose2motion::metrics::{
    baseline_frame_copy, evaluate_clip, precision_recall, subsample_poses, MetricReport, Reference, PR_SAMPLES,
};
use pose2motion::motion::{Motion, Pose};
use pose2motion::skeleton::Skeleton;
use pose2motion::training::{self, write_atomic, Checkpoint, Correspondence, Networks};

use crate::config::{JointSets, ReferenceKind, RunConfig};
use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MOTION_MANIFEST: &str = "motion_manifest.json";
pub const POSE_MANIFEST: &str = "pose_manifest.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join(RESOLVED_CONFIG), &cfg.to_json())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn list_bvh(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("{} is not a directory", dir.display())));
    }
    let files = bvh_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Validation(format!("no .bvh files in {}", dir.display())));
    }
    Ok(files)
}

fn read_clip(path: &Path, sets: &JointSets) -> Result<Clip, CliError> {
    let (skeleton, motion) = read_bvh(path)?;
    Ok(Clip { name: file_name(path), skeleton: sets.apply(&skeleton)?, motion })
}

/// Reads every file, listing all failures at once.
fn read_all(dir: &Path, sets: &JointSets) -> Result<Vec<Clip>, CliError> {
    let files = list_bvh(dir)?;
    let total = files.len();
    let mut clips = Vec::new();
    let mut failed = Vec::new();
    for f in files {
        match read_clip(&f, sets) {
            Ok(c) => clips.push(c),
            Err(e) => failed.push((f.display().to_string(), e.to_string())),
        }
    }
    if failed.is_empty() {
        Ok(clips)
    } else {
        Err(CliError::Partial { total, failed })
    }
}

fn pose_dataset(cfg: &RunConfig) -> Result<PoseDataset, CliError> {
    let mut pd = match &cfg.paths.target_manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read pose manifest {}: {e}", p.display())))?;
            let m: PoseManifest =
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            m.load()?
        }
        None => {
            let mut clips = read_all(&cfg.paths.target_dir, &JointSets::default())?;
            // Manifests name clips by path so they can be reloaded.
            for (c, f) in clips.iter_mut().zip(list_bvh(&cfg.paths.target_dir)?) {
                c.name = f.display().to_string();
            }
            build_pose_dataset(&clips, cfg.data.pose_fraction, cfg.data.pose_seed)?
        }
    };
    pd.skeleton = cfg.skeletons.target.apply(&pd.skeleton)?;
    Ok(pd)
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.paths.output_dir.join("prepare");
    write_resolved(cfg, &dir)?;
    let source = read_all(&cfg.paths.source_dir, &cfg.skeletons.source)?;
    let md = build_motion_dataset(&source, cfg.data.window, cfg.data.stride)?;
    let pd = pose_dataset(cfg)?;
    write(&dir.join(MOTION_MANIFEST), &pretty(&md.manifest()))?;
    write(&dir.join(POSE_MANIFEST), &pretty(&pd.manifest()))?;
    println!("{} windows from {} clips, {} of {} target poses", md.windows.len(), source.len(), pd.len(), pd.pool_size);
    Ok(())
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("manifest serializes")
}

pub fn fixtures(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = generate_fixture_corpus(&cfg.fixtures.spec, cfg.fixtures.seed)?;
    for (dir, clips) in [(&cfg.paths.source_dir, &corpus.source), (&cfg.paths.target_dir, &corpus.target)] {
        create_dir(dir)?;
        for c in clips {
            write(&dir.join(&c.name), &c.bvh()?)?;
        }
    }
    println!(
        "{} source clips in {}, {} target clips in {}",
        corpus.source.len(),
        cfg.paths.source_dir.display(),
        corpus.target.len(),
        cfg.paths.target_dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.train_dir();
    write_resolved(cfg, &dir)?;
    let source = read_all(&cfg.paths.source_dir, &cfg.skeletons.source)?;
    let md = build_motion_dataset(&source, cfg.data.window, cfg.data.stride)?;
    let pd = pose_dataset(cfg)?;
    log::info!("{} source windows, {} target poses, {} steps", md.windows.len(), pd.len(), cfg.training.steps);
    let every = (cfg.training.steps / 20).max(1);
    let out = training::train(&md, &pd, &cfg.training, Some(&dir), |r| {
        if r.step % every == 0 {
            log::info!("step {} total {:.4e} recon {:.4e}", r.step, r.total, r.recon);
        }
    })?;
    let ckpt = out.checkpoint.expect("an output directory was given");
    println!("trained {} steps; checkpoint {}", out.trainer.step, ckpt.display());
    Ok(())
}

fn networks(cfg: &RunConfig) -> Result<Networks, CliError> {
    let path = cfg.checkpoint_path();
    if !path.is_file() {
        return Err(CliError::Validation(format!("missing checkpoint {}", path.display())));
    }
    Ok(Checkpoint::load(&path)?.networks()?)
}

fn check_source(nets: &Networks, clip: &Clip) -> Result<(), CliError> {
    if !clip.skeleton.matches(&nets.source, 1e-5) {
        return Err(CliError::Validation(format!(
            "skeleton {} does not match the trained source skeleton {}",
            clip.skeleton.signature(),
            nets.source.signature()
        )));
    }
    Ok(())
}

/// Maps every source clip through `f` into `sub_dir`, listing failed files.
fn map_source(
    cfg: &RunConfig,
    sub_dir: &str,
    f: impl Fn(&Networks, &Motion) -> Result<Motion, CliError>,
) -> Result<(), CliError> {
    let nets = networks(cfg)?;
    let dir = match sub_dir {
        "retargeted" => cfg.retargeted_dir(),
        _ => cfg.paths.output_dir.join(sub_dir),
    };
    write_resolved(cfg, &dir)?;
    let files = list_bvh(&cfg.paths.source_dir)?;
    let total = files.len();
    let mut failed = Vec::new();
    for path in &files {
        let r = read_clip(path, &cfg.skeletons.source).and_then(|c| {
            check_source(&nets, &c)?;
            let y = f(&nets, &c.motion)?;
            Ok(write_bvh_file(&dir.join(&c.name), &nets.target, &y)?)
        });
        if let Err(e) = r {
            failed.push((path.display().to_string(), e.to_string()));
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Partial { total, failed });
    }
    println!("wrote {total} clips to {}", dir.display());
    Ok(())
}

pub fn retarget(cfg: &RunConfig) -> Result<(), CliError> {
    map_source(cfg, "retargeted", |nets, m| Ok(nets.retarget(m)?))
}

pub fn baseline(cfg: &RunConfig) -> Result<(), CliError> {
    map_source(cfg, "baseline", |nets, m| {
        Ok(baseline_frame_copy(&nets.source, m, &nets.target, |p| nets.map_poses(p))?)
    })
}

fn evaluate_one(
    cfg: &RunConfig,
    path: &Path,
    reference_dir: &Path,
) -> Result<pose2motion::metrics::ClipMetrics, CliError> {
    let ret = read_clip(path, &cfg.skeletons.target)?;
    let ref_path = reference_dir.join(&ret.name);
    if !ref_path.is_file() {
        return Err(CliError::Validation(format!("no reference file {}", ref_path.display())));
    }
    let eps = cfg.training.contact_eps;
    match cfg.evaluation.reference {
        ReferenceKind::Truth => {
            let truth = read_clip(&ref_path, &cfg.skeletons.target)?;
            if !truth.skeleton.matches(&ret.skeleton, 1e-5) {
                return Err(CliError::Validation("retargeted and reference skeletons differ".into()));
            }
            Ok(evaluate_clip(&ret.name, &ret.skeleton, &ret.motion, Reference::Truth(&truth.motion), eps)?)
        }
        ReferenceKind::Source => {
            let src = read_clip(&ref_path, &cfg.skeletons.source)?;
            let corr = Correspondence::new(&src.skeleton, &ret.skeleton, &cfg.training.aliases)?;
            let reference = Reference::Source { skeleton: &src.skeleton, motion: &src.motion, feet: &corr.feet };
            Ok(evaluate_clip(&ret.name, &ret.skeleton, &ret.motion, reference, eps)?)
        }
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.paths.output_dir.clone();
    write_resolved(cfg, &dir)?;
    let reference_dir = cfg.reference_dir();
    let files = list_bvh(&cfg.retargeted_dir())?;
    let total = files.len();
    let mut clips = Vec::new();
    let mut failed = Vec::new();
    for path in &files {
        match evaluate_one(cfg, path, &reference_dir) {
            Ok(m) => clips.push(m),
            Err(e) => failed.push((path.display().to_string(), e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Partial { total, failed });
    }
    let report = MetricReport::new(clips);
    let stem = &cfg.evaluation.report;
    write(&dir.join(format!("{stem}.csv")), &report.to_csv())?;
    write(&dir.join(format!("{stem}.json")), &report.to_json())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn all_poses(clips: &[Clip]) -> Result<(Skeleton, Vec<Pose>), CliError> {
    let sk = clips[0].skeleton.clone();
    if let Some(c) = clips.iter().find(|c| !c.skeleton.matches(&sk, 1e-5)) {
        return Err(CliError::Validation(format!("{} uses a different skeleton", c.name)));
    }
    Ok((sk, clips.iter().flat_map(|c| c.motion.frames.iter().map(|f| f.pose.clone())).collect()))
}

pub fn pr(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.paths.output_dir.clone();
    write_resolved(cfg, &dir)?;
    let (sk, generated) = all_poses(&read_all(&cfg.retargeted_dir(), &cfg.skeletons.target)?)?;
    let reference = match &cfg.evaluation.reference_dir {
        Some(d) => all_poses(&read_all(d, &cfg.skeletons.target)?)?,
        None => {
            let pd = pose_dataset(cfg)?;
            (pd.skeleton, pd.poses)
        }
    };
    if !reference.0.matches(&sk, 1e-5) {
        return Err(CliError::Validation("retargeted and reference skeletons differ".into()));
    }
    let seed = cfg.evaluation.pr_seed;
    let a = subsample_poses(&generated, PR_SAMPLES, seed);
    let b = subsample_poses(&reference.1, PR_SAMPLES, seed.wrapping_add(1));
    let curve = precision_recall(&sk, &a, &b)?;
    let path = dir.join(format!("{}.csv", cfg.evaluation.pr_report));
    write(&path, &curve.to_csv())?;
    let last = curve.precision.len() - 1;
    println!(
        "{} generated and {} reference poses; precision {:.3} and recall {:.3} at the widest threshold; {}",
        a.len(),
        b.len(),
        curve.precision[last],
        curve.recall[last],
        path.display()
    );
    Ok(())
}
