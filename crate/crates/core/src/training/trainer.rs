use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::losses::{
    contact_loss, ee_offset_loss, ee_velocity_loss, frame_differences, motion_positions_graph, motion_tensor,
    reconstruction_loss, rest_offsets, rot6d_penalty, select_joints, total_loss_graph, wgan_losses, Correspondence,
    LossParts,
};
use super::penalty::{gradient_penalty, interpolate, PenaltyHead};
use super::state::{chains_of, rest_of, stack, write_history_csv, Checkpoint, HistoryRow, Networks};
use super::{TrainConfig, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::autodiff::{AdamState, Array, Bound, Graph, NodeId, ParamStore};
use crate::dataset::{MotionDataset, PoseDataset};
use crate::error::{Error, Result};
use crate::motion::{contact_labels, motion_channels, JointPositions, Motion};
use crate::nets::ChannelStats;
use crate::rotation::Vec3;
use crate::skeleton::Skeleton;

/// Joint selections and normalizers shared by the kinematic loss terms.
#[derive(Clone, Debug)]
struct PairGeometry {
    source: Skeleton,
    target: Skeleton,
    source_feet: Vec<usize>,
    target_feet: Vec<usize>,
    source_ees: Vec<usize>,
    target_ees: Vec<usize>,
    source_chains: Vec<f64>,
    target_chains: Vec<f64>,
    source_rest: Vec<Vec3>,
    target_rest: Vec<Vec3>,
    eps: f64,
}

/// Fixed source-side quantities of one window.
#[derive(Clone, Debug)]
struct SourceTerms {
    labels: Array,
    ee_velocity: Array,
    ee_offset: Array,
}

impl PairGeometry {
    fn new(source: &Skeleton, target: &Skeleton, corr: &Correspondence, eps: f64) -> Self {
        let (source_ees, target_ees) = (corr.source_end_effectors(), corr.target_end_effectors());
        Self {
            source: source.clone(),
            target: target.clone(),
            source_feet: corr.source_feet(),
            target_feet: corr.target_feet(),
            source_chains: chains_of(source, &source_ees),
            target_chains: chains_of(target, &target_ees),
            source_rest: rest_of(source, &source_ees),
            target_rest: rest_of(target, &target_ees),
            source_ees,
            target_ees,
            eps,
        }
    }

    /// Source quantities go through the same graph kernels as the generated
    /// side, so an identical target reproduces them bit for bit.
    fn source_terms(&self, m: &Motion) -> Result<SourceTerms> {
        m.validate_for(&self.source)?;
        let mut g = Graph::new();
        let x = g.constant(motion_tensor(&[m])?);
        let pos = motion_positions_graph(&mut g, &self.source, x)?;
        let (t, j) = (m.len(), self.source.joint_count());
        let rows: Vec<Vec3> = g.value(pos).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let labels = contact_labels(&JointPositions::new(t, j, rows)?, &self.source_feet, self.eps)?;
        let labels = Array::new(vec![labels.frames(), labels.feet()], labels.as_f64())?;
        let ees = select_joints(&mut g, pos, &self.source_ees)?;
        let ev = frame_differences(&mut g, ees)?;
        let eo = rest_offsets(&mut g, ees, &self.source_rest)?;
        let k = self.source_ees.len();
        Ok(SourceTerms {
            labels,
            ee_velocity: g.value(ev).clone().reshaped(vec![t - 1, k, 3])?,
            ee_offset: g.value(eo).clone().reshaped(vec![t, k, 3])?,
        })
    }

    /// `(L_con, L_ee, L_ee,r)` of generated target motion `[B, C, T]`.
    fn target_losses(&self, g: &mut Graph, y: NodeId, src: &[&SourceTerms]) -> Result<(NodeId, NodeId, NodeId)> {
        let labels = stack(&src.iter().map(|s| &s.labels).collect::<Vec<_>>())?;
        let vel = stack(&src.iter().map(|s| &s.ee_velocity).collect::<Vec<_>>())?;
        let off = stack(&src.iter().map(|s| &s.ee_offset).collect::<Vec<_>>())?;
        let pos = motion_positions_graph(g, &self.target, y)?;
        let feet = select_joints(g, pos, &self.target_feet)?;
        let fv = frame_differences(g, feet)?;
        let con = contact_loss(g, fv, &labels)?;
        let ees = select_joints(g, pos, &self.target_ees)?;
        let ev = frame_differences(g, ees)?;
        let ee = ee_velocity_loss(g, ev, &self.target_chains, &vel, &self.source_chains)?;
        let eo = rest_offsets(g, ees, &self.target_rest)?;
        let ee_r = ee_offset_loss(g, eo, &self.target_chains, &off, &self.source_chains)?;
        Ok((con, ee, ee_r))
    }
}

/// Kinematic loss values between a source motion and a target motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLosses {
    pub con: f64,
    pub ee: f64,
    pub ee_r: f64,
}

/// `L_con`, `L_ee` and `L_ee,r` of `target` as a retargeting of `source`.
pub fn motion_pair_losses(
    source_skeleton: &Skeleton,
    source: &Motion,
    target_skeleton: &Skeleton,
    target: &Motion,
    corr: &Correspondence,
    eps: f64,
) -> Result<PairLosses> {
    if source.len() != target.len() || source.len() < 2 {
        return Err(Error::Validation(format!(
            "motions of {} and {} frames cannot be compared",
            source.len(),
            target.len()
        )));
    }
    source.validate_for(source_skeleton)?;
    target.validate_for(target_skeleton)?;
    let geo = PairGeometry::new(source_skeleton, target_skeleton, corr, eps);
    let terms = geo.source_terms(source)?;
    let mut g = Graph::new();
    let y = g.constant(motion_tensor(&[target])?);
    let (con, ee, ee_r) = geo.target_losses(&mut g, y, &[&terms])?;
    Ok(PairLosses { con: g.value(con).item(), ee: g.value(ee).item(), ee_r: g.value(ee_r).item() })
}

/// Permutes `[B, C, T]` into frame rows `[B·T, C]` by value.
fn frame_rows(x: &Array) -> Array {
    let [b, c, t] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let mut out = vec![0.0; b * c * t];
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                out[(bi * t + ti) * c + ci] = x.data()[(bi * c + ci) * t + ti];
            }
        }
    }
    Array::new(vec![b * t, c], out).expect("sized")
}

fn take_columns(x: &Array, cols: usize) -> Array {
    let c = x.shape()[1];
    let data = x.data().chunks(c).flat_map(|r| r[..cols].iter().copied()).collect();
    Array::new(vec![x.shape()[0], cols], data).expect("sized")
}

fn take_rows(x: &Array, rows: &[usize]) -> Array {
    let c = x.shape()[1];
    let data = rows.iter().flat_map(|&r| x.data()[r * c..(r + 1) * c].iter().copied()).collect();
    Array::new(vec![rows.len(), c], data).expect("sized")
}

fn standardized(stats: &ChannelStats, x: &Array) -> Array {
    let a = stats.standardize();
    let [_, c, t] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let data = x.data().iter().enumerate().map(|(i, v)| a.apply_value((i / t) % c, *v)).collect();
    Array::new(x.shape().to_vec(), data).expect("sized")
}

fn all_finite(store: &ParamStore) -> bool {
    store.values().iter().all(Array::all_finite)
}

/// Training state over one source motion set and one target pose set.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub nets: Networks,
    pub optimizers: [AdamState; 4],
    pub step: u64,
    pub history: Vec<HistoryRow>,
    geometry: PairGeometry,
    windows: Vec<Array>,
    terms: Vec<SourceTerms>,
    poses: Array,
}

impl Trainer {
    pub fn new(source: &MotionDataset, target: &PoseDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if source.windows.is_empty() {
            return Err(Error::Validation("the source motion set has no windows".into()));
        }
        let stats = ChannelStats::of_motions(&source.windows)?;
        let nets = Networks::new(&source.skeleton, &target.skeleton, stats, config)?;
        let optimizers = [
            AdamState::new(config.optimizer, &nets.generator.params),
            AdamState::new(config.optimizer, &nets.inverse.params),
            AdamState::new(config.critic_optimizer, &nets.pose_critic.params),
            AdamState::new(config.critic_optimizer, &nets.motion_critic.params),
        ];
        Self::assemble(source, target, config.clone(), nets, optimizers, 0, Vec::new())
    }

    /// Continues from a checkpoint over the same data.
    pub fn resume(checkpoint: &Checkpoint, source: &MotionDataset, target: &PoseDataset) -> Result<Self> {
        let nets = checkpoint.networks()?;
        if !nets.source.matches(&source.skeleton, 1e-9) || !nets.target.matches(&target.skeleton, 1e-9) {
            return Err(Error::Validation("checkpoint skeletons differ from the datasets".into()));
        }
        Self::assemble(
            source,
            target,
            checkpoint.config.clone(),
            nets,
            checkpoint.optimizers.clone(),
            checkpoint.step,
            checkpoint.history.clone(),
        )
    }

    fn assemble(
        source: &MotionDataset,
        target: &PoseDataset,
        config: TrainConfig,
        nets: Networks,
        optimizers: [AdamState; 4],
        step: u64,
        history: Vec<HistoryRow>,
    ) -> Result<Self> {
        if target.is_empty() && config.weights.adversarial() {
            return Err(Error::Config(
                "the target pose set is empty; this is only allowed with the adversarial weight set to 0".into(),
            ));
        }
        let corr = Correspondence::new(&source.skeleton, &target.skeleton, &config.aliases)?;
        let geometry = PairGeometry::new(&source.skeleton, &target.skeleton, &corr, config.contact_eps);
        let mut windows = Vec::with_capacity(source.windows.len());
        let mut terms = Vec::with_capacity(source.windows.len());
        for w in &source.windows {
            let x = motion_tensor(&[w])?;
            windows.push(x.reshaped(vec![motion_channels(w.joint_count()), w.len()])?);
            terms.push(geometry.source_terms(w)?);
        }
        let jt = target.skeleton.joint_count();
        let pose_data: Vec<f64> = target.poses.iter().flat_map(|p| p.flat()).collect();
        let poses = Array::new(vec![target.len(), 6 * jt], pose_data)?;
        Ok(Self { config, nets, optimizers, step, history, geometry, windows, terms, poses })
    }

    fn rng(&self, step: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.config.seed);
        r.set_stream(step);
        r
    }

    fn diverged(&self, detail: impl Into<String>) -> Error {
        Error::Diverged { step: self.step + 1, detail: detail.into(), last_good: None }
    }

    /// One generator update preceded by `n_critic` updates of each critic.
    pub fn step(&mut self) -> Result<HistoryRow> {
        let row = self.step_inner().map_err(|e| match e {
            Error::Rotation { .. } | Error::Numerical(_) => self.diverged(e.to_string()),
            Error::Diff(crate::autodiff::DiffError::Degenerate { .. }) => self.diverged(e.to_string()),
            other => other,
        })?;
        if !row.is_finite() {
            return Err(self.diverged("non-finite loss"));
        }
        if !self.nets.stores().into_iter().all(all_finite) {
            return Err(self.diverged("non-finite parameters"));
        }
        self.step += 1;
        self.history.push(row);
        Ok(row)
    }

    fn step_inner(&mut self) -> Result<HistoryRow> {
        let s = self.step + 1;
        let mut rng = self.rng(s);
        let n = self.windows.len();
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| rng.gen_range(0..n)).collect();
        let x = self.batch(&idx)?;
        let mut row = HistoryRow { step: s, ..Default::default() };
        if self.config.weights.adversarial() {
            self.critic_steps(&x, &mut rng, &mut row)?;
        }
        self.generator_step(&x, &idx, &mut row)?;
        Ok(row)
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    /// Source windows `idx` as a `[B, C, T]` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Array> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.windows.len()) {
            return Err(Error::Validation(format!("window {i} out of range")));
        }
        stack(&idx.iter().map(|&i| &self.windows[i]).collect::<Vec<_>>())
    }

    /// The `n_critic` critic updates of the next step on windows `idx`, leaving
    /// the step counter and history alone.
    pub fn critic_phase(&mut self, idx: &[usize]) -> Result<HistoryRow> {
        let x = self.batch(idx)?;
        let mut rng = self.rng(self.step + 1);
        let mut row = HistoryRow { step: self.step + 1, ..Default::default() };
        self.critic_steps(&x, &mut rng, &mut row)?;
        Ok(row)
    }

    /// One generator update on windows `idx`, leaving the step counter and history alone.
    pub fn generator_phase(&mut self, idx: &[usize]) -> Result<HistoryRow> {
        let x = self.batch(idx)?;
        let mut row = HistoryRow { step: self.step + 1, ..Default::default() };
        self.generator_step(&x, idx, &mut row)?;
        Ok(row)
    }

    fn critic_steps(&mut self, x: &Array, rng: &mut ChaCha8Rng, row: &mut HistoryRow) -> Result<()> {
        let nets = &self.nets;
        let y = nets.generator.apply(x)?;
        let z = nets.inverse.apply(&y)?;
        let jt = self.geometry.target.joint_count();
        let fake_poses = take_columns(&frame_rows(&y), 6 * jt);
        let fake_motion = standardized(&nets.stats, &z);
        let lambda = self.config.weights.gp;
        let (pb, b) = (self.config.pose_batch, x.shape()[0]);
        for _ in 0..self.config.n_critic {
            // Pose critic: every generated frame against sampled target poses.
            let real_idx: Vec<usize> = (0..pb).map(|_| rng.gen_range(0..self.poses.shape()[0])).collect();
            let fake_idx: Vec<usize> = (0..pb).map(|_| rng.gen_range(0..fake_poses.shape()[0])).collect();
            let real = take_rows(&self.poses, &real_idx);
            let mix = interpolate(&real, &take_rows(&fake_poses, &fake_idx), rng)?;
            let dp = &self.nets.pose_critic;
            let mut g = Graph::new();
            let p = dp.params.bind(&mut g, true);
            let (rn, fnode, xh) = (g.constant(real), g.constant(fake_poses.clone()), g.constant(mix));
            let sr = dp.forward(&mut g, &p, rn)?;
            let sf = dp.forward(&mut g, &p, fnode)?;
            let (critic, _) = wgan_losses(&mut g, sr, sf)?;
            let (local, global) = dp.forward_split(&mut g, &p, xh)?;
            let (sl, sg) = (g.sum(local), g.sum(global));
            let share = jt as f64 / (jt as f64 + 1.0);
            let heads = [
                PenaltyHead { output: sl, block: 6, weight: share },
                PenaltyHead { output: sg, block: 6 * jt, weight: 1.0 - share },
            ];
            let gp = gradient_penalty(&mut g, xh, &heads)?;
            let scaled = g.scale(gp, lambda);
            let loss = g.add(critic, scaled)?;
            g.backward(loss)?;
            let grads = dp.params.grads(&g, &p);
            row.critic_pose = g.value(critic).item();
            row.gp_pose = g.value(gp).item();
            self.optimizers[2].step(&mut self.nets.pose_critic.params, &grads)?;

            // Motion critic: reconstructions against fresh source windows.
            let ridx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..self.windows.len())).collect();
            let real = standardized(&self.nets.stats, &self.batch(&ridx)?);
            let mix = interpolate(&real, &fake_motion, rng)?;
            let dm = &self.nets.motion_critic;
            let mut g = Graph::new();
            let p = dm.params.bind(&mut g, true);
            let (rn, fnode, xh) = (g.constant(real), g.constant(fake_motion.clone()), g.constant(mix));
            let sr = dm.forward(&mut g, &p, rn)?;
            let sf = dm.forward(&mut g, &p, fnode)?;
            let (critic, _) = wgan_losses(&mut g, sr, sf)?;
            let sh = dm.forward(&mut g, &p, xh)?;
            let patches = g.shape(sh)[1] as f64;
            let total = g.sum(sh);
            let per_sample = g.scale(total, 1.0 / patches);
            let block = fake_motion.len() / b;
            let gp = gradient_penalty(&mut g, xh, &[PenaltyHead { output: per_sample, block, weight: 1.0 }])?;
            let scaled = g.scale(gp, lambda);
            let loss = g.add(critic, scaled)?;
            g.backward(loss)?;
            let grads = dm.params.grads(&g, &p);
            row.critic_motion = g.value(critic).item();
            row.gp_motion = g.value(gp).item();
            self.optimizers[3].step(&mut self.nets.motion_critic.params, &grads)?;
        }
        Ok(())
    }

    /// The generator objective on batch `x` of windows `idx`, with the generator
    /// and inverse parameters bound to `pg` and `pf` and the critics held fixed.
    pub fn generator_loss(
        &self,
        g: &mut Graph,
        pg: &Bound,
        pf: &Bound,
        x: &Array,
        idx: &[usize],
    ) -> Result<(NodeId, LossParts<Option<NodeId>>)> {
        let w = self.config.weights;
        let nets = &self.nets;
        let jt = self.geometry.target.joint_count();
        let xi = g.constant(x.clone());
        let y = nets.generator.forward(g, pg, xi)?;
        let z = nets.inverse.forward(g, pf, y)?;
        let mut parts: LossParts<Option<NodeId>> = LossParts::default();
        parts.recon = Some(reconstruction_loss(g, z, xi)?);
        let [b, c, t] = [g.shape(y)[0], g.shape(y)[1], g.shape(y)[2]];
        let frames = g.permute(y, &[0, 2, 1])?;
        let rows = g.reshape(frames, &[b * t, c])?;
        if w.adversarial() {
            let pd = nets.pose_critic.params.bind(g, false);
            let poses = g.slice(rows, 1, 0, 6 * jt)?;
            let sf = nets.pose_critic.forward(g, &pd, poses)?;
            let m = g.mean(sf);
            parts.gan_pose = Some(g.scale(m, -1.0));
            let pm = nets.motion_critic.params.bind(g, false);
            let zs = nets.stats.standardize().forward(g, z)?;
            let sm = nets.motion_critic.forward(g, &pm, zs)?;
            let m = g.mean(sm);
            parts.gan_motion = Some(g.scale(m, -1.0));
        }
        let src: Vec<&SourceTerms> = idx.iter().map(|&i| &self.terms[i]).collect();
        let (con, ee, ee_r) = self.geometry.target_losses(g, y, &src)?;
        parts.con = Some(con);
        parts.ee = Some(ee);
        parts.ee_r = Some(ee_r);
        let six = g.slice(rows, 1, 0, 6 * jt + 6)?;
        let six = g.reshape(six, &[b * t * (jt + 1), 6])?;
        parts.rot6d = Some(rot6d_penalty(g, six)?);
        let total = total_loss_graph(g, &parts, &w)?;
        Ok((total, parts))
    }

    fn generator_step(&mut self, x: &Array, idx: &[usize], row: &mut HistoryRow) -> Result<()> {
        let mut g = Graph::new();
        let pg = self.nets.generator.params.bind(&mut g, true);
        let pf = self.nets.inverse.params.bind(&mut g, true);
        let (total, parts) = self.generator_loss(&mut g, &pg, &pf, x, idx)?;
        g.backward(total)?;
        let gg = self.nets.generator.params.grads(&g, &pg);
        let gf = self.nets.inverse.params.grads(&g, &pf);
        let val = |n: Option<NodeId>| n.map_or(0.0, |n| g.value(n).item());
        row.total = g.value(total).item();
        row.recon = val(parts.recon);
        row.con = val(parts.con);
        row.ee = val(parts.ee);
        row.ee_r = val(parts.ee_r);
        row.gan_pose_g = val(parts.gan_pose);
        row.gan_motion_g = val(parts.gan_motion);
        row.rot6d = val(parts.rot6d);
        if !row.is_finite() {
            return Ok(());
        }
        self.optimizers[0].step(&mut self.nets.generator.params, &gg)?;
        self.optimizers[1].step(&mut self.nets.inverse.params, &gf)?;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let n = &self.nets;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.config.clone(),
            source: n.source.clone(),
            target: n.target.clone(),
            stats: n.stats.clone(),
            generator: n.generator.params.clone(),
            inverse: n.inverse.params.clone(),
            pose_critic: n.pose_critic.params.clone(),
            motion_critic: n.motion_critic.params.clone(),
            optimizers: self.optimizers.clone(),
            history: self.history.clone(),
        }
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Last checkpoint written, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";

fn save(trainer: &Trainer, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&path)?;
    write_history_csv(&dir.join(HISTORY_FILE), &trainer.history)?;
    Ok(path)
}

/// Runs `config.steps` steps. With `out_dir`, checkpoints and the loss history are
/// written there on schedule and at the end; a divergence reports the last
/// checkpoint that was written.
pub fn train(
    source: &MotionDataset,
    target: &PoseDataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut observe: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(source, target, config)?;
    let mut last_good = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while trainer.step < config.steps {
        match trainer.step() {
            Ok(row) => observe(&row),
            Err(Error::Diverged { step, detail, .. }) => {
                return Err(Error::Diverged { step, detail, last_good });
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = out_dir {
            let due = config.checkpoint_every > 0 && trainer.step % config.checkpoint_every == 0;
            if due && trainer.step < config.steps {
                last_good = Some(save(&trainer, dir)?);
            }
        }
    }
    if let Some(dir) = out_dir {
        last_good = Some(save(&trainer, dir)?);
    }
    Ok(TrainOutcome { trainer, checkpoint: last_good })
}
