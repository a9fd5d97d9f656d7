//! Named parameter storage and the layers built on it.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Order is insertion order and is
/// what checkpoints and optimizer slots are keyed on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        self.trainable.push(trainable);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Inserts every parameter into `graph` as a leaf. Frozen parameters
    /// become constants unless `all_trainable` is set.
    pub fn bind(&self, graph: &mut Graph, all_trainable: bool) -> Bindings {
        let vars = self
            .tensors
            .iter()
            .zip(&self.trainable)
            .map(|(t, &tr)| graph.leaf(t.clone(), tr || all_trainable))
            .collect();
        Bindings { vars }
    }

    /// Gradients of every parameter after `graph.backward`, `None` for
    /// parameters that did not receive one.
    pub fn collect_grads(&self, graph: &Graph, bindings: &Bindings) -> Vec<Option<Tensor>> {
        bindings.vars.iter().map(|&v| graph.grad(v).cloned()).collect()
    }
}

/// Graph handles for one forward pass over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    /// Wraps leaves created elsewhere, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

/// Affine layer `x * w + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var, TensorError> {
        g.linear(x, b.var(self.weight), b.var(self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[width], 1.0), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var, TensorError> {
        g.layer_norm(x, b.var(self.gain), b.var(self.bias), LAYER_NORM_EPS)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}
