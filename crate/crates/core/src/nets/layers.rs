use std::sync::Arc;

use rand::Rng;

use super::topology::{Pooling, SkeletalTopology};
use crate::autodiff::{Array, Bound, DiffError, Graph, NodeId, Param, ParamStore};

/// Temporal geometry and initialization of one skeletal convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    /// Neighborhood radius; `None` connects every node pair.
    pub distance: Option<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Negative slope of the activation that follows, used for the init gain.
    pub slope: f64,
    /// Multiplier on the uniform init bound.
    pub init_scale: f64,
}

impl ConvSpec {
    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

fn offsets(channels: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(channels.len() + 1);
    o.push(0);
    for c in channels {
        o.push(o.last().unwrap() + c);
    }
    o
}

/// Temporal convolution whose output channels of node `i` read only the input
/// channels of nodes within the configured graph distance of `i`.
#[derive(Clone, Debug)]
pub struct SkeletalConv {
    pub weight: Param,
    pub bias: Param,
    mask: Option<Arc<Vec<f64>>>,
    in_channels: Vec<usize>,
    out_channels: Vec<usize>,
    spec: ConvSpec,
}

impl SkeletalConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        topo: &SkeletalTopology,
        in_channels: &[usize],
        out_channels: &[usize],
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        assert_eq!(in_channels.len(), topo.len(), "input channel list must cover the topology");
        assert_eq!(out_channels.len(), topo.len(), "output channel list must cover the topology");
        let (oi, oo) = (offsets(in_channels), offsets(out_channels));
        let (cin, cout, k) = (oi[topo.len()], oo[topo.len()], spec.kernel);
        let mut mask = vec![0.0; cout * cin * k];
        for j in 0..topo.len() {
            for i in 0..topo.len() {
                if spec.distance.is_some_and(|d| topo.distance(i, j) > d) {
                    continue;
                }
                for co in oo[j]..oo[j + 1] {
                    for ci in oi[i]..oi[i + 1] {
                        mask[(co * cin + ci) * k..][..k].fill(1.0);
                    }
                }
            }
        }
        let gain = (6.0 / (1.0 + spec.slope * spec.slope)).sqrt() * spec.init_scale;
        let mut w = vec![0.0; mask.len()];
        for co in 0..cout {
            let row = co * cin * k..(co + 1) * cin * k;
            let fan_in = mask[row.clone()].iter().filter(|&&m| m != 0.0).count().max(1);
            let bound = gain / (fan_in as f64).sqrt();
            for (wv, &m) in w[row.clone()].iter_mut().zip(&mask[row]) {
                if m != 0.0 {
                    *wv = rng.gen_range(-bound..=bound);
                }
            }
        }
        let weight = store.add(format!("{name}.weight"), Array::new(vec![cout, cin, k], w).expect("sized"));
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[cout]));
        let dense = mask.iter().all(|&m| m != 0.0);
        Self {
            weight,
            bias,
            mask: (!dense).then(|| Arc::new(mask)),
            in_channels: in_channels.to_vec(),
            out_channels: out_channels.to_vec(),
            spec,
        }
    }

    pub fn in_width(&self) -> usize {
        self.in_channels.iter().sum()
    }

    pub fn out_width(&self) -> usize {
        self.out_channels.iter().sum()
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    /// Connectivity of the weight tensor, all ones when unrestricted.
    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref().map(|m| m.as_slice())
    }

    /// `x` is `[batch, channels, time]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId, DiffError> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.in_width() {
            return Err(DiffError::ShapeMismatch {
                op: "skeletal_conv",
                left: s.to_vec(),
                right: vec![self.in_width()],
            });
        }
        g.conv1d(
            x,
            p.get(self.weight),
            Some(p.get(self.bias)),
            self.spec.stride,
            self.spec.padding(),
            1,
            self.mask.clone(),
        )
    }
}

/// Fixed channel map between the nodes of two topologies.
#[derive(Clone, Debug)]
pub struct Resample {
    weight: Array,
}

impl Resample {
    /// Channel mean over each group, `channels` per node.
    pub fn pool(pooling: &Pooling, channels: usize) -> Self {
        let (nf, nc) = (pooling.fine_len(), pooling.groups().len());
        let mut w = vec![0.0; nc * channels * nf * channels];
        for (gi, members) in pooling.groups().iter().enumerate() {
            let share = 1.0 / members.len() as f64;
            for &m in members {
                for c in 0..channels {
                    w[(gi * channels + c) * nf * channels + m * channels + c] = share;
                }
            }
        }
        Self { weight: Array::new(vec![nc * channels, nf * channels, 1], w).expect("sized") }
    }

    /// Copies each group's channels back to all of its members.
    pub fn unpool(pooling: &Pooling, channels: usize) -> Self {
        let (nf, nc) = (pooling.fine_len(), pooling.groups().len());
        let mut w = vec![0.0; nf * channels * nc * channels];
        for (gi, members) in pooling.groups().iter().enumerate() {
            for &m in members {
                for c in 0..channels {
                    w[(m * channels + c) * nc * channels + gi * channels + c] = 1.0;
                }
            }
        }
        Self { weight: Array::new(vec![nf * channels, nc * channels, 1], w).expect("sized") }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, DiffError> {
        let w = g.constant(self.weight.clone());
        g.conv1d(x, w, None, 1, 0, 1, None)
    }
}

/// Fixed per-channel `scale · x + shift` on `[batch, channels, time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Self { scale: vec![1.0; channels], shift: vec![0.0; channels] }
    }

    /// Maps data with the given moments to zero mean and unit spread.
    pub fn standardize(mean: &[f64], std: &[f64]) -> Self {
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
        let shift = mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        Self { scale, shift }
    }

    /// Inverse of [`Affine::standardize`].
    pub fn restore(mean: &[f64], std: &[f64]) -> Self {
        Self { scale: std.to_vec(), shift: mean.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    pub fn apply_value(&self, c: usize, x: f64) -> f64 {
        self.scale[c] * x + self.shift[c]
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, DiffError> {
        let c = self.len();
        let w = g.constant(Array::new(vec![c, 1, 1], self.scale.clone())?);
        let b = g.constant(Array::from_vec(self.shift.clone()));
        g.conv1d(x, w, Some(b), 1, 0, c, None)
    }
}
