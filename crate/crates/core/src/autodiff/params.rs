use serde::{Deserialize, Serialize};

use super::{Array, Graph, NodeId};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Param(pub usize);

/// Named parameter arrays owned by one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

/// Graph nodes a [`ParamStore`] was bound to for one evaluation.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn get(&self, p: Param) -> NodeId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> Param {
        self.names.push(name.into());
        self.values.push(value);
        Param(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn get(&self, p: Param) -> &Array {
        &self.values[p.0]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Array {
        &mut self.values[p.0]
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Places every parameter on `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let ids =
            self.values.iter().map(|v| if trainable { g.variable(v.clone()) } else { g.constant(v.clone()) }).collect();
        Bound { ids }
    }

    /// Gradients left on `g` by backward, zero where none arrived.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Array> {
        bound
            .ids
            .iter()
            .zip(&self.values)
            .map(|(id, v)| g.grad(*id).cloned().unwrap_or_else(|| Array::zeros(v.shape())))
            .collect()
    }

    /// Order-sensitive FNV-1a digest over the exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for x in v.data() {
                for byte in x.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
