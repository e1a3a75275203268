use rand::Rng;

use super::layers::{Affine, ConvSpec, Resample, SkeletalConv};
use super::topology::{SkeletalTopology, SkeletonPair};
use super::ArchConfig;
use crate::autodiff::{Array, Bound, DiffError, Graph, NodeId, ParamStore};
use crate::rotation::IDENTITY_6D;

/// Raw channels per node of an augmented topology: 6 per joint, 9 for the armature.
pub fn raw_channels(topo: &SkeletalTopology) -> Vec<usize> {
    let mut c = vec![6; topo.len()];
    *c.last_mut().unwrap() = 9;
    c
}

/// Head bias producing the rest pose, identity orientation and zero velocity.
pub fn rest_bias(joints: usize) -> Vec<f64> {
    let mut b: Vec<f64> = std::iter::repeat(IDENTITY_6D).take(joints + 1).flatten().collect();
    b.extend([0.0; 3]);
    b
}

/// Encoder–decoder translating motion between the two sides of a [`SkeletonPair`].
///
/// The encoder runs on the input side's hierarchy and pools down to the shared
/// reduced tree; the decoder unpools onto the output side's tree. Both sides use
/// the channels-first layout `[batch, channels, time]` with the channel order of
/// [`crate::motion::Motion::to_flat`].
#[derive(Clone, Debug)]
pub struct Translator {
    pub params: ParamStore,
    input: Affine,
    output: Affine,
    encoder: Vec<SkeletalConv>,
    pools: Vec<Resample>,
    decoder: Vec<SkeletalConv>,
    unpools: Vec<Resample>,
    head: SkeletalConv,
    slope: f64,
}

impl Translator {
    /// `input` normalizes the incoming channels and `output` maps head values to
    /// motion channels.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        pair: &SkeletonPair,
        arch: &ArchConfig,
        input: Affine,
        output: Affine,
        rng: &mut R,
    ) -> Self {
        let (src, dst) = (&pair.source, &pair.target);
        let depth = pair.depth();
        let conv =
            |distance, kernel, init_scale| ConvSpec { distance, kernel, stride: 1, slope: arch.slope, init_scale };
        let hidden = conv(Some(arch.neighbor_distance), arch.kernel, 1.0);
        let width = |l: usize| if l == depth { arch.latent } else { arch.channels };
        let mut params = ParamStore::new();
        let mut encoder = Vec::new();
        let mut pools = Vec::new();
        for l in 0..=depth {
            let topo = &src.levels[l];
            let cin = if l == 0 { raw_channels(topo) } else { vec![width(l - 1); topo.len()] };
            let cout = vec![width(l); topo.len()];
            encoder.push(SkeletalConv::new(&mut params, &format!("{name}.enc{l}"), topo, &cin, &cout, hidden, rng));
            if l < depth {
                pools.push(Resample::pool(&src.pools[l], width(l)));
            }
        }
        let mut decoder = Vec::new();
        let mut unpools = Vec::new();
        for l in (0..=depth).rev() {
            let topo = &dst.levels[l];
            let cin = if l == depth { arch.latent } else { arch.channels };
            let cin = vec![cin; topo.len()];
            let cout = vec![arch.channels; topo.len()];
            decoder.push(SkeletalConv::new(&mut params, &format!("{name}.dec{l}"), topo, &cin, &cout, hidden, rng));
            if l > 0 {
                unpools.push(Resample::unpool(&dst.pools[l - 1], arch.channels));
            }
        }
        let fine = dst.fine();
        let head_spec = conv(Some(0), 1, arch.head_init);
        let head = SkeletalConv::new(
            &mut params,
            &format!("{name}.head"),
            fine,
            &vec![arch.channels; fine.len()],
            &raw_channels(fine),
            head_spec,
            rng,
        );
        let bias = rest_bias(fine.len() - 1);
        params.get_mut(head.bias).data_mut().copy_from_slice(&bias);
        Self { params, input, output, encoder, pools, decoder, unpools, head, slope: arch.slope }
    }

    pub fn in_width(&self) -> usize {
        self.encoder[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.head.out_width()
    }

    pub fn head(&self) -> &SkeletalConv {
        &self.head
    }

    pub fn output_map(&self) -> &Affine {
        &self.output
    }

    /// `[batch, in_width, time]` to `[batch, out_width, time]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId, DiffError> {
        let mut h = self.input.forward(g, x)?;
        for (l, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
            if let Some(pool) = self.pools.get(l) {
                h = pool.forward(g, h)?;
            }
        }
        for (l, conv) in self.decoder.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            h = g.leaky_relu(h, self.slope);
            if let Some(unpool) = self.unpools.get(l) {
                h = unpool.forward(g, h)?;
            }
        }
        let y = self.head.forward(g, p, h)?;
        self.output.forward(g, y)
    }

    /// Evaluates on plain values with frozen parameters.
    pub fn apply(&self, x: &Array) -> Result<Array, DiffError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xi)?;
        Ok(g.value(y).clone())
    }
}
