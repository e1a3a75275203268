use std::sync::Arc;

use super::array::{axis_blocks, numel, Array};
use super::kernels::{self, ConvDims};
use super::DiffError;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Recip(NodeId),
    Matmul(NodeId, NodeId),
    Conv1d { x: NodeId, w: NodeId, bias: Option<NodeId>, dims: ConvDims, mask: Option<Arc<Vec<f64>>> },
    LeakyRelu(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    Norm2(NodeId),
    Normalize(NodeId),
    Cross(NodeId, NodeId),
    Concat(Vec<NodeId>, usize),
    Slice { x: NodeId, axis: usize, start: usize, end: usize },
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    BroadcastLast(NodeId, usize),
    Cumsum { x: NodeId, axis: usize, exclusive: bool },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::Cross(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Recip(a)
            | Op::LeakyRelu(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::Norm2(a)
            | Op::Normalize(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::BroadcastLast(a, _) => vec![*a],
            Op::Slice { x, .. } | Op::Cumsum { x, .. } => vec![*x],
            Op::Conv1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Norm below which a vector is treated as degenerate by [`Graph::normalize`].
pub const DEGENERATE_NORM: f64 = 1e-9;

/// A tape of differentiable computations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
    backward_done: bool,
    visits: usize,
}

fn accumulate(slot: &mut Option<Array>, g: Array) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn sum_all(a: &Array) -> f64 {
    a.data().iter().sum()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Array) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Number of node visits performed by gradient propagation so far.
    pub fn backward_visits(&self) -> usize {
        self.visits
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ---- elementwise ----

    fn binary_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>, DiffError> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(sa.shape().to_vec())
        } else if sb.is_scalar() {
            Ok(sa.shape().to_vec())
        } else if sa.is_scalar() {
            Ok(sb.shape().to_vec())
        } else {
            Err(DiffError::ShapeMismatch { op, left: sa.shape().to_vec(), right: sb.shape().to_vec() })
        }
    }

    fn zip_values(&self, a: NodeId, b: NodeId, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Array {
        let (va, vb) = (self.value(a), self.value(b));
        let n = numel(&shape);
        let data = (0..n)
            .map(|i| {
                let x = if va.is_scalar() { va.item() } else { va.data()[i] };
                let y = if vb.is_scalar() { vb.item() } else { vb.data()[i] };
                f(x, y)
            })
            .collect();
        Array::new(shape, data).expect("shape computed from operands")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.binary_shape("add", a, b)?;
        let v = self.zip_values(a, b, shape, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.binary_shape("sub", a, b)?;
        let v = self.zip_values(a, b, shape, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.binary_shape("mul", a, b)?;
        let v = self.zip_values(a, b, shape, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    /// `x ⊙ x`.
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a).expect("same shape")
    }

    // ---- linear algebra ----

    /// Matrix product of 2-D `[m,k]·[k,n]` or batched 3-D `[b,m,k]·[b,k,n]` operands.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || DiffError::ShapeMismatch { op: "matmul", left: sa.clone(), right: sb.clone() };
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; batch * m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, batch, m, k, n);
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.push(Array::new(shape, out)?, Op::Matmul(a, b)))
    }

    /// Grouped temporal convolution over `[batch, channels, time]` with zero padding.
    ///
    /// `w` is `[c_out, c_in / groups, kernel]`. A `mask` (same length as `w`) zeroes
    /// weights out of the computation entirely, both forward and backward.
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
        mask: Option<Arc<Vec<f64>>>,
    ) -> Result<NodeId, DiffError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad = |reason: &str| DiffError::InvalidShape {
            op: "conv1d",
            shape: sx.clone(),
            reason: format!("{reason} (weight {sw:?})"),
        };
        let ([batch, c_in, t_in], [c_out, cin_g, kernel]) = (sx.as_slice(), sw.as_slice()) else {
            return Err(bad("expected [batch, channels, time] input and 3-D weight"));
        };
        let (batch, c_in, t_in, c_out, cin_g, kernel) = (*batch, *c_in, *t_in, *c_out, *cin_g, *kernel);
        if groups == 0 || stride == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in {
            return Err(DiffError::ShapeMismatch { op: "conv1d", left: sx, right: sw });
        }
        if t_in + 2 * padding < kernel {
            return Err(bad("sequence shorter than kernel"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(DiffError::ShapeMismatch {
                    op: "conv1d bias",
                    left: vec![c_out],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        if let Some(m) = &mask {
            if m.len() != numel(&sw) {
                return Err(bad("mask length differs from weight"));
            }
        }
        let t_out = (t_in + 2 * padding - kernel) / stride + 1;
        let dims = ConvDims { batch, c_in, t_in, c_out, kernel, stride, padding, groups, t_out };
        let mut out = vec![0.0; batch * c_out * t_out];
        kernels::conv1d_forward(
            &dims,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            mask.as_deref().map(|m| m.as_slice()),
            &mut out,
        );
        let v = Array::new(vec![batch, c_out, t_out], out)?;
        Ok(self.push(v, Op::Conv1d { x, w, bias, dims, mask }))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(sum_all(self.value(a)));
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let v = Array::scalar(sum_all(self.value(a)) / n);
        self.push(v, Op::Mean(a))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, DiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::InvalidShape { op: "sum_axis", shape, reason: format!("axis {axis} out of range") });
        }
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        Ok(self.push(Array::new(new_shape, out)?, Op::SumAxis(a, axis)))
    }

    fn last_axis(&self, op: &'static str, a: NodeId) -> Result<usize, DiffError> {
        match self.shape(a).last() {
            Some(&k) if k > 0 => Ok(k),
            _ => Err(DiffError::InvalidShape {
                op,
                shape: self.shape(a).to_vec(),
                reason: "needs a non-empty last axis".into(),
            }),
        }
    }

    /// Euclidean norm over the last axis.
    pub fn norm2(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let k = self.last_axis("norm2", a)?;
        let v = self.value(a);
        let data: Vec<f64> = v.data().chunks(k).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let shape = v.shape()[..v.ndim() - 1].to_vec();
        Ok(self.push(Array::new(shape, data)?, Op::Norm2(a)))
    }

    /// Scales each last-axis row to unit length; rows with norm below
    /// [`DEGENERATE_NORM`] are rejected.
    pub fn normalize(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let k = self.last_axis("normalize", a)?;
        let v = self.value(a);
        let mut data = Vec::with_capacity(v.len());
        for (row_idx, r) in v.data().chunks(k).enumerate() {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n >= DEGENERATE_NORM) {
                return Err(DiffError::Degenerate { op: "normalize", row: row_idx });
            }
            data.extend(r.iter().map(|x| x / n));
        }
        let v = Array::new(v.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Normalize(a)))
    }

    /// Row-wise cross product of last-axis 3-vectors.
    pub fn cross(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb || sa.last() != Some(&3) {
            return Err(DiffError::ShapeMismatch { op: "cross", left: sa, right: sb });
        }
        let data = cross_rows(self.value(a).data(), self.value(b).data());
        Ok(self.push(Array::new(sa, data)?, Op::Cross(a, b)))
    }

    // ---- structure ----

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, DiffError> {
        let first =
            xs.first().ok_or(DiffError::InvalidShape { op: "concat", shape: vec![], reason: "no inputs".into() })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(DiffError::InvalidShape {
                op: "concat",
                shape: base,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(DiffError::ShapeMismatch { op: "concat", left: base, right: s.to_vec() });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_blocks(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Array::new(shape, out)?, Op::Concat(xs.to_vec(), axis)))
    }

    /// Elements `[start, end)` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId, DiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(DiffError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{end} on axis {axis}"),
            });
        }
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        Ok(self.push(Array::new(new_shape, out)?, Op::Slice { x: a, axis, start, end }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let v = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId, DiffError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&x| x < shape.len() && !std::mem::replace(&mut seen[x], true));
        if !valid {
            return Err(DiffError::InvalidShape { op: "permute", shape, reason: format!("bad axes {axes:?}") });
        }
        let (new_shape, data) = kernels::permute(self.value(a).data(), &shape, axes);
        Ok(self.push(Array::new(new_shape, data)?, Op::Permute(a, axes.to_vec())))
    }

    /// Repeats each element `k` times along a new trailing axis.
    pub fn broadcast_last(&mut self, a: NodeId, k: usize) -> NodeId {
        let v = self.value(a);
        let data: Vec<f64> = v.data().iter().flat_map(|&x| std::iter::repeat(x).take(k)).collect();
        let mut shape = v.shape().to_vec();
        shape.push(k);
        let v = Array::new(shape, data).expect("consistent");
        self.push(v, Op::BroadcastLast(a, k))
    }

    /// Running sum along `axis`; `exclusive` starts each run at zero.
    pub fn cumsum(&mut self, a: NodeId, axis: usize, exclusive: bool) -> Result<NodeId, DiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::InvalidShape { op: "cumsum", shape, reason: format!("axis {axis} out of range") });
        }
        let data = cumsum_data(self.value(a).data(), &shape, axis, exclusive, false);
        Ok(self.push(Array::new(shape, data)?, Op::Cumsum { x: a, axis, exclusive }))
    }

    // ---- gradients ----

    /// Reverse-mode pass from a scalar `output`, filling gradients of every node
    /// that depends on a variable. May run once per graph until [`Graph::reset_grads`].
    pub fn backward(&mut self, output: NodeId) -> Result<(), DiffError> {
        if self.backward_done {
            return Err(DiffError::BackwardRepeated);
        }
        let reach: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        self.grads = self.propagate(output, &reach)?;
        self.backward_done = true;
        Ok(())
    }

    /// Gradients of scalar `output` with respect to `wrt`, without touching the
    /// graph's stored gradients. Only nodes on a path to `wrt` are visited.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Array>, DiffError> {
        let mut reach = vec![false; self.nodes.len()];
        for w in wrt {
            reach[w.0] = true;
        }
        for i in 0..self.nodes.len() {
            if !reach[i] && self.nodes[i].op.inputs().iter().any(|x| reach[x.0]) {
                reach[i] = true;
            }
        }
        let grads = self.propagate(output, &reach)?;
        Ok(wrt.iter().map(|w| grads[w.0].clone().unwrap_or_else(|| Array::zeros(self.shape(*w)))).collect())
    }

    fn propagate(&mut self, output: NodeId, reach: &[bool]) -> Result<Vec<Option<Array>>, DiffError> {
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(DiffError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::full(out_val.shape(), 1.0));
        for i in (0..=output.0).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.visits += 1;
            for (input, contrib) in self.input_grads(i, &g, reach) {
                accumulate(&mut grads[input.0], contrib);
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn input_grads(&self, i: usize, g: &Array, reach: &[bool]) -> Vec<(NodeId, Array)> {
        let node = &self.nodes[i];
        let want = |id: &NodeId| reach[id.0];
        let mut out = Vec::new();
        // Reduces an output-shaped gradient onto a possibly scalar operand.
        let fit = |id: NodeId, grad: Array| -> Array {
            if self.value(id).len() == grad.len() {
                grad.reshaped(self.shape(id).to_vec()).expect("same size")
            } else {
                Array::full(self.shape(id), sum_all(&grad))
            }
        };
        let scalar_or = |id: NodeId, idx: usize| -> f64 {
            let v = self.value(id);
            if v.is_scalar() {
                v.item()
            } else {
                v.data()[idx]
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    out.push((*a, fit(*a, g.clone())));
                }
                if want(b) {
                    out.push((*b, fit(*b, g.clone())));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((*a, fit(*a, g.clone())));
                }
                if want(b) {
                    out.push((*b, fit(*b, g.map(|x| -x))));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let data = g.data().iter().enumerate().map(|(k, gv)| gv * scalar_or(*b, k)).collect();
                    out.push((*a, fit(*a, Array::new(g.shape().to_vec(), data).expect("shape"))));
                }
                if want(b) {
                    let data = g.data().iter().enumerate().map(|(k, gv)| gv * scalar_or(*a, k)).collect();
                    out.push((*b, fit(*b, Array::new(g.shape().to_vec(), data).expect("shape"))));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.map(|x| x * c))),
            Op::Recip(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(gv, yv)| -gv * yv * yv).collect();
                out.push((*a, Array::new(y.shape().to_vec(), data).expect("shape")));
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n) =
                    if sa.len() == 2 { (1, sa[0], sa[1], sb[1]) } else { (sa[0], sa[1], sa[2], sb[2]) };
                if want(a) {
                    let mut ga = vec![0.0; batch * m * k];
                    kernels::matmul_grad_a(g.data(), self.value(*b).data(), &mut ga, batch, m, k, n);
                    out.push((*a, Array::new(sa.to_vec(), ga).expect("shape")));
                }
                if want(b) {
                    let mut gb = vec![0.0; batch * k * n];
                    kernels::matmul_grad_b(g.data(), self.value(*a).data(), &mut gb, batch, m, k, n);
                    out.push((*b, Array::new(sb.to_vec(), gb).expect("shape")));
                }
            }
            Op::Conv1d { x, w, bias, dims, mask } => {
                let mask = mask.as_deref().map(|m| m.as_slice());
                if want(x) {
                    let mut gx = vec![0.0; self.value(*x).len()];
                    kernels::conv1d_backward_input(dims, g.data(), self.value(*w).data(), mask, &mut gx);
                    out.push((*x, Array::new(self.shape(*x).to_vec(), gx).expect("shape")));
                }
                if want(w) {
                    let mut gw = vec![0.0; self.value(*w).len()];
                    kernels::conv1d_backward_weight(dims, g.data(), self.value(*x).data(), mask, &mut gw);
                    out.push((*w, Array::new(self.shape(*w).to_vec(), gw).expect("shape")));
                }
                if let Some(b) = bias.filter(|b| want(b)) {
                    let mut gb = vec![0.0; dims.c_out];
                    kernels::conv1d_backward_bias(dims, g.data(), &mut gb);
                    out.push((b, Array::from_vec(gb)));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let data =
                    g.data().iter().zip(x.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope }).collect();
                out.push((*a, Array::new(x.shape().to_vec(), data).expect("shape")));
            }
            Op::Sum(a) => out.push((*a, Array::full(self.shape(*a), g.item()))),
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                out.push((*a, Array::full(self.shape(*a), g.item() / n)));
            }
            Op::SumAxis(a, axis) => {
                let shape = self.shape(*a);
                let (outer, len, inner) = axis_blocks(shape, *axis);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        data.extend_from_slice(&g.data()[o * inner..][..inner]);
                    }
                }
                out.push((*a, Array::new(shape.to_vec(), data).expect("shape")));
            }
            Op::Norm2(a) => {
                let x = self.value(*a);
                let k = *x.shape().last().expect("checked");
                let mut data = Vec::with_capacity(x.len());
                for ((row, n), gv) in x.data().chunks(k).zip(node.value.data()).zip(g.data()) {
                    if *n > 0.0 {
                        data.extend(row.iter().map(|v| gv * v / n));
                    } else {
                        data.extend(std::iter::repeat(0.0).take(k));
                    }
                }
                out.push((*a, Array::new(x.shape().to_vec(), data).expect("shape")));
            }
            Op::Normalize(a) => {
                let x = self.value(*a);
                let k = *x.shape().last().expect("checked");
                let mut data = Vec::with_capacity(x.len());
                for ((xr, yr), gr) in x.data().chunks(k).zip(node.value.data().chunks(k)).zip(g.data().chunks(k)) {
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    data.extend(yr.iter().zip(gr).map(|(y, g)| (g - y * dot) / n));
                }
                out.push((*a, Array::new(x.shape().to_vec(), data).expect("shape")));
            }
            Op::Cross(a, b) => {
                if want(a) {
                    let data = cross_rows(self.value(*b).data(), g.data());
                    out.push((*a, Array::new(g.shape().to_vec(), data).expect("shape")));
                }
                if want(b) {
                    let data = cross_rows(g.data(), self.value(*a).data());
                    out.push((*b, Array::new(g.shape().to_vec(), data).expect("shape")));
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_blocks(g.shape(), *axis);
                let mut offset = 0;
                for x in xs {
                    let len = self.shape(*x)[*axis];
                    if want(x) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            data.extend_from_slice(&g.data()[(o * total + offset) * inner..][..len * inner]);
                        }
                        out.push((*x, Array::new(self.shape(*x).to_vec(), data).expect("shape")));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start, end } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = axis_blocks(shape, *axis);
                let width = end - start;
                let mut data = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    data[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&g.data()[o * width * inner..][..width * inner]);
                }
                out.push((*x, Array::new(shape.to_vec(), data).expect("shape")));
            }
            Op::Reshape(a) => out.push((*a, g.clone().reshaped(self.shape(*a).to_vec()).expect("same size"))),
            Op::Permute(a, axes) => {
                let (shape, data) = kernels::permute(g.data(), g.shape(), &kernels::inverse_axes(axes));
                out.push((*a, Array::new(shape, data).expect("shape")));
            }
            Op::BroadcastLast(a, k) => {
                let data = g.data().chunks(*k).map(|r| r.iter().sum()).collect();
                out.push((*a, Array::new(self.shape(*a).to_vec(), data).expect("shape")));
            }
            Op::Cumsum { x, axis, exclusive } => {
                let data = cumsum_data(g.data(), g.shape(), *axis, *exclusive, true);
                out.push((*x, Array::new(g.shape().to_vec(), data).expect("shape")));
            }
        }
        out
    }

    /// Forward-mode tangent of `output` given tangents for some earlier nodes.
    ///
    /// `seeds` pairs a node with a tangent node of the same shape. The returned
    /// tangent (None when `output` does not depend on any seed) is built from
    /// ordinary graph nodes, so it can itself be differentiated in reverse mode.
    pub fn jvp(&mut self, output: NodeId, seeds: &[(NodeId, NodeId)]) -> Result<Option<NodeId>, DiffError> {
        for (node, tangent) in seeds {
            if self.shape(*node) != self.shape(*tangent) {
                return Err(DiffError::ShapeMismatch {
                    op: "jvp seed",
                    left: self.shape(*node).to_vec(),
                    right: self.shape(*tangent).to_vec(),
                });
            }
        }
        let Some(start) = seeds.iter().map(|(n, _)| n.0).min() else { return Ok(None) };
        let mut tangents: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        for (node, tangent) in seeds {
            tangents[node.0] = Some(*tangent);
        }
        for i in start..=output.0 {
            if tangents[i].is_some() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if op.inputs().iter().all(|x| tangents[x.0].is_none()) {
                continue;
            }
            tangents[i] = self.tangent_rule(NodeId(i), &op, &tangents)?;
        }
        Ok(tangents[output.0])
    }

    fn tangent_rule(&mut self, id: NodeId, op: &Op, t: &[Option<NodeId>]) -> Result<Option<NodeId>, DiffError> {
        let tan = |x: &NodeId| t[x.0];
        let match_shape = |g: &Graph, tangent: NodeId| -> Result<NodeId, DiffError> {
            if g.shape(tangent) == g.shape(id) {
                Ok(tangent)
            } else {
                Err(DiffError::Unsupported("tangent of a broadcast scalar operand"))
            }
        };
        let r = match op {
            Op::Leaf => None,
            Op::Add(a, b) => match (tan(a), tan(b)) {
                (Some(x), Some(y)) => Some(self.add(x, y)?),
                (Some(x), None) => Some(match_shape(self, x)?),
                (None, Some(y)) => Some(match_shape(self, y)?),
                (None, None) => None,
            },
            Op::Sub(a, b) => match (tan(a), tan(b)) {
                (Some(x), Some(y)) => Some(self.sub(x, y)?),
                (Some(x), None) => Some(match_shape(self, x)?),
                (None, Some(y)) => {
                    let n = self.scale(y, -1.0);
                    Some(match_shape(self, n)?)
                }
                (None, None) => None,
            },
            Op::Mul(a, b) => {
                let left = tan(a).map(|x| self.mul(x, *b)).transpose()?;
                let right = tan(b).map(|y| self.mul(*a, y)).transpose()?;
                self.sum_opt(left, right)?
            }
            Op::Scale(a, c) => tan(a).map(|x| self.scale(x, *c)),
            Op::Recip(a) => match tan(a) {
                Some(x) => {
                    let xy = self.mul(x, id)?;
                    let xyy = self.mul(xy, id)?;
                    Some(self.scale(xyy, -1.0))
                }
                None => None,
            },
            Op::Matmul(a, b) => {
                let left = tan(a).map(|x| self.matmul(x, *b)).transpose()?;
                let right = tan(b).map(|y| self.matmul(*a, y)).transpose()?;
                self.sum_opt(left, right)?
            }
            Op::Conv1d { x, w, bias, dims, mask } => {
                let (s, p, gr) = (dims.stride, dims.padding, dims.groups);
                let tb = bias.and_then(|b| tan(&b));
                let left = tan(x).map(|tx| self.conv1d(tx, *w, tb, s, p, gr, mask.clone())).transpose()?;
                let right = tan(w).map(|tw| self.conv1d(*x, tw, None, s, p, gr, mask.clone())).transpose()?;
                match (left, right, tb) {
                    (None, None, Some(tb)) => {
                        let zw = self.constant(Array::zeros(self.shape(*w)));
                        Some(self.conv1d(*x, zw, Some(tb), s, p, gr, None)?)
                    }
                    (None, Some(r), Some(tb)) => {
                        let zw = self.constant(Array::zeros(self.shape(*w)));
                        let b = self.conv1d(*x, zw, Some(tb), s, p, gr, None)?;
                        Some(self.add(r, b)?)
                    }
                    (l, r, _) => self.sum_opt(l, r)?,
                }
            }
            Op::LeakyRelu(a, slope) => match tan(a) {
                Some(x) => {
                    let m = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { *slope });
                    let m = self.constant(m);
                    Some(self.mul(x, m)?)
                }
                None => None,
            },
            Op::Sum(a) => tan(a).map(|x| self.sum(x)),
            Op::Mean(a) => tan(a).map(|x| self.mean(x)),
            Op::SumAxis(a, axis) => tan(a).map(|x| self.sum_axis(x, *axis)).transpose()?,
            Op::Norm2(a) => match tan(a) {
                Some(x) => {
                    let last = self.shape(*a).len() - 1;
                    let unit = self.normalize(*a)?;
                    let prod = self.mul(unit, x)?;
                    Some(self.sum_axis(prod, last)?)
                }
                None => None,
            },
            Op::Normalize(a) => match tan(a) {
                Some(x) => {
                    let shape = self.shape(*a).to_vec();
                    let (last, k) = (shape.len() - 1, shape[shape.len() - 1]);
                    let yx = self.mul(id, x)?;
                    let dot = self.sum_axis(yx, last)?;
                    let dot = self.broadcast_last(dot, k);
                    let proj = self.mul(id, dot)?;
                    let perp = self.sub(x, proj)?;
                    let n = self.norm2(*a)?;
                    let inv = self.recip(n);
                    let inv = self.broadcast_last(inv, k);
                    Some(self.mul(perp, inv)?)
                }
                None => None,
            },
            Op::Cross(a, b) => {
                let left = tan(a).map(|x| self.cross(x, *b)).transpose()?;
                let right = tan(b).map(|y| self.cross(*a, y)).transpose()?;
                self.sum_opt(left, right)?
            }
            Op::Concat(xs, axis) => {
                let parts: Vec<NodeId> = xs
                    .iter()
                    .map(|x| {
                        tan(x).unwrap_or_else(|| {
                            let z = Array::zeros(self.shape(*x));
                            self.constant(z)
                        })
                    })
                    .collect();
                Some(self.concat(&parts, *axis)?)
            }
            Op::Slice { x, axis, start, end } => tan(x).map(|tx| self.slice(tx, *axis, *start, *end)).transpose()?,
            Op::Reshape(a) => {
                let shape = self.shape(id).to_vec();
                tan(a).map(|x| self.reshape(x, &shape)).transpose()?
            }
            Op::Permute(a, axes) => tan(a).map(|x| self.permute(x, axes)).transpose()?,
            Op::BroadcastLast(a, k) => tan(a).map(|x| self.broadcast_last(x, *k)),
            Op::Cumsum { x, axis, exclusive } => tan(x).map(|tx| self.cumsum(tx, *axis, *exclusive)).transpose()?,
        };
        Ok(r)
    }

    fn sum_opt(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Result<Option<NodeId>, DiffError> {
        Ok(match (a, b) {
            (Some(x), Some(y)) => Some(self.add(x, y)?),
            (x, y) => x.or(y),
        })
    }
}

fn cross_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for (u, v) in a.chunks(3).zip(b.chunks(3)) {
        out.push(u[1] * v[2] - u[2] * v[1]);
        out.push(u[2] * v[0] - u[0] * v[2]);
        out.push(u[0] * v[1] - u[1] * v[0]);
    }
    out
}

/// Forward (`reverse == false`) or adjoint running sums along `axis`.
fn cumsum_data(src: &[f64], shape: &[usize], axis: usize, exclusive: bool, reverse: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_blocks(shape, axis);
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            let order: Box<dyn Iterator<Item = usize>> =
                if reverse { Box::new((0..len).rev()) } else { Box::new(0..len) };
            for l in order {
                let idx = (o * len + l) * inner + i;
                if exclusive {
                    out[idx] = acc;
                    acc += src[idx];
                } else {
                    acc += src[idx];
                    out[idx] = acc;
                }
            }
        }
    }
    out
}
