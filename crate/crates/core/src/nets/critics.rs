use rand::Rng;

use super::generator::raw_channels;
use super::layers::{ConvSpec, SkeletalConv};
use super::topology::SkeletalTopology;
use super::ArchConfig;
use crate::autodiff::{Array, Bound, DiffError, Graph, NodeId, Param, ParamStore};

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, slope: f64) -> Array {
    let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("sized")
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: Param,
    bias: Param,
    groups: usize,
}

impl Dense {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        groups: usize,
        cin_g: usize,
        cout_g: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[groups * cout_g, cin_g, 1], cin_g, slope));
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[groups * cout_g]));
        Self { weight, bias, groups }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId, DiffError> {
        g.conv1d(x, p.get(self.weight), Some(p.get(self.bias)), 1, 0, self.groups, None)
    }
}

/// `J + 1` Wasserstein critics over single poses: one per joint reading only that
/// joint's 6 values, and one reading the whole pose.
#[derive(Clone, Debug)]
pub struct PoseCritic {
    pub params: ParamStore,
    joints: usize,
    local: [Dense; 3],
    global: [Dense; 3],
    slope: f64,
}

impl PoseCritic {
    pub fn new<R: Rng + ?Sized>(name: &str, joints: usize, arch: &ArchConfig, rng: &mut R) -> Self {
        let (h, s) = (arch.critic_hidden, arch.slope);
        let mut params = ParamStore::new();
        let local = [
            Dense::new(&mut params, &format!("{name}.joint0"), joints, 6, h, s, rng),
            Dense::new(&mut params, &format!("{name}.joint1"), joints, h, h, s, rng),
            Dense::new(&mut params, &format!("{name}.joint2"), joints, h, 1, s, rng),
        ];
        let gh = arch.critic_hidden * 2;
        let global = [
            Dense::new(&mut params, &format!("{name}.global0"), 1, 6 * joints, gh, s, rng),
            Dense::new(&mut params, &format!("{name}.global1"), 1, gh, gh, s, rng),
            Dense::new(&mut params, &format!("{name}.global2"), 1, gh, 1, s, rng),
        ];
        Self { params, joints, local, global, slope: arch.slope }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    fn mlp(&self, g: &mut Graph, p: &Bound, layers: &[Dense; 3], x: NodeId) -> Result<NodeId, DiffError> {
        let mut h = x;
        for (i, l) in layers.iter().enumerate() {
            h = l.forward(g, p, h)?;
            if i < 2 {
                h = g.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    /// Per-joint scores `[N, J]` and whole-pose scores `[N, 1]` for poses `[N, 6J]`.
    pub fn forward_split(&self, g: &mut Graph, p: &Bound, poses: NodeId) -> Result<(NodeId, NodeId), DiffError> {
        let s = g.shape(poses).to_vec();
        if s.len() != 2 || s[1] != 6 * self.joints {
            return Err(DiffError::ShapeMismatch { op: "pose_critic", left: s, right: vec![6 * self.joints] });
        }
        let n = s[0];
        let t = g.permute(poses, &[1, 0])?;
        let x = g.reshape(t, &[1, 6 * self.joints, n])?;
        let local = self.mlp(g, p, &self.local, x)?;
        let global = self.mlp(g, p, &self.global, x)?;
        let local = g.reshape(local, &[self.joints, n])?;
        let local = g.permute(local, &[1, 0])?;
        let global = g.reshape(global, &[n, 1])?;
        Ok((local, global))
    }

    /// `[N, J + 1]` scores; the last column is the whole-pose critic.
    pub fn forward(&self, g: &mut Graph, p: &Bound, poses: NodeId) -> Result<NodeId, DiffError> {
        let (l, gl) = self.forward_split(g, p, poses)?;
        g.concat(&[l, gl], 1)
    }

    pub fn score(&self, poses: &Array) -> Result<Array, DiffError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(poses.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

/// Patch critic over standardized motion windows.
#[derive(Clone, Debug)]
pub struct MotionCritic {
    pub params: ParamStore,
    convs: [SkeletalConv; 2],
    out: SkeletalConv,
    slope: f64,
}

impl MotionCritic {
    pub fn new<R: Rng + ?Sized>(name: &str, topo: &SkeletalTopology, arch: &ArchConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let spec = ConvSpec {
            distance: Some(arch.neighbor_distance),
            kernel: arch.kernel,
            stride: 2,
            slope: arch.slope,
            init_scale: 1.0,
        };
        let hidden = vec![arch.critic_channels; topo.len()];
        let c0 =
            SkeletalConv::new(&mut params, &format!("{name}.conv0"), topo, &raw_channels(topo), &hidden, spec, rng);
        let c1 = SkeletalConv::new(&mut params, &format!("{name}.conv1"), topo, &hidden, &hidden, spec, rng);
        let mut single = vec![0; topo.len()];
        single[0] = 1;
        let out_spec = ConvSpec { distance: None, kernel: 1, stride: 1, ..spec };
        let out = SkeletalConv::new(&mut params, &format!("{name}.out"), topo, &hidden, &single, out_spec, rng);
        Self { params, convs: [c0, c1], out, slope: arch.slope }
    }

    /// Total temporal stride.
    pub fn stride(&self) -> usize {
        4
    }

    /// Frames that influence one patch score.
    pub fn receptive_field(&self) -> usize {
        3 * self.convs[0].spec().kernel - 2
    }

    pub fn patches(&self, frames: usize) -> usize {
        frames.div_ceil(2).div_ceil(2)
    }

    /// `[B, C, T]` to patch scores `[B, ⌈T/4⌉]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId, DiffError> {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
        }
        let y = self.out.forward(g, p, h)?;
        let s = g.shape(y).to_vec();
        g.reshape(y, &[s[0], s[2]])
    }

    pub fn score(&self, x: &Array) -> Result<Array, DiffError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xi)?;
        Ok(g.value(y).clone())
    }
}
