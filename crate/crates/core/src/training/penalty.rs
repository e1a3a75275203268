use rand::Rng;

use crate::autodiff::{Array, DiffError, Graph, NodeId};

/// One critic output covered by the penalty.
#[derive(Clone, Copy, Debug)]
pub struct PenaltyHead {
    /// Scalar sum of the critic's per-sample scores at the interpolates.
    pub output: NodeId,
    /// Entries per gradient block; each sample's flattened row splits into blocks.
    pub block: usize,
    /// Share of this head in the penalty.
    pub weight: f64,
}

/// `u · real + (1 − u) · fake` with one `u ~ U(0, 1)` per leading-axis sample.
pub fn interpolate<R: Rng + ?Sized>(real: &Array, fake: &Array, rng: &mut R) -> Result<Array, DiffError> {
    if real.shape() != fake.shape() || real.is_empty() {
        return Err(DiffError::ShapeMismatch {
            op: "gradient_penalty",
            left: real.shape().to_vec(),
            right: fake.shape().to_vec(),
        });
    }
    let n = real.shape()[0];
    let per = real.len() / n;
    let mut data = Vec::with_capacity(real.len());
    for s in 0..n {
        let u: f64 = rng.gen();
        let (r, f) = (&real.data()[s * per..][..per], &fake.data()[s * per..][..per]);
        data.extend(r.iter().zip(f).map(|(a, b)| u * a + (1.0 - u) * b));
    }
    Array::new(real.shape().to_vec(), data)
}

/// `Σ_h w_h · mean_blocks (‖∇_x̂ S_h‖ − 1)²` as a node whose value is the penalty
/// and whose parameter gradient is exact.
///
/// The input gradient is evaluated by value; the penalty's dependence on the
/// critic parameters is then carried by the directional derivative of `S_h`
/// along the fixed direction `∂P/∂g`, which has the same parameter gradient.
pub fn gradient_penalty(g: &mut Graph, x_hat: NodeId, heads: &[PenaltyHead]) -> Result<NodeId, DiffError> {
    let shape = g.shape(x_hat).to_vec();
    let len: usize = shape.iter().product();
    let mut value = 0.0;
    let mut tangents = Vec::new();
    for h in heads {
        if h.block == 0 || len % h.block != 0 {
            return Err(DiffError::InvalidShape {
                op: "gradient_penalty",
                shape: shape.clone(),
                reason: format!("block of {} entries does not tile the sample", h.block),
            });
        }
        let grad = g.gradients(h.output, &[x_hat])?.remove(0);
        let blocks = len / h.block;
        let mut dir = vec![0.0; len];
        for (gb, db) in grad.data().chunks(h.block).zip(dir.chunks_mut(h.block)) {
            let norm = gb.iter().map(|v| v * v).sum::<f64>().sqrt();
            value += h.weight * (norm - 1.0).powi(2) / blocks as f64;
            if norm > 0.0 {
                let c = 2.0 * h.weight * (norm - 1.0) / (norm * blocks as f64);
                db.iter_mut().zip(gb).for_each(|(d, v)| *d = c * v);
            }
        }
        let u = g.constant(Array::new(shape.clone(), dir)?);
        if let Some(t) = g.jvp(h.output, &[(x_hat, u)])? {
            tangents.push(t);
        }
    }
    let mut acc = g.constant(Array::scalar(0.0));
    for t in tangents {
        acc = g.add(acc, t)?;
    }
    let offset = value - g.value(acc).item();
    let c = g.constant(Array::scalar(offset));
    g.add(acc, c)
}
