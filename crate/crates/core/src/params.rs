//! Named parameter storage and the two learnable layer types.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvSpec;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, insertion-ordered list of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a wiring bug.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Scalars held by tensors whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape")
}

/// 2-D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
    ) -> Self {
        assert_eq!(cin % spec.groups, 0, "{name}: groups must divide input channels");
        assert_eq!(cout % spec.groups, 0, "{name}: groups must divide output channels");
        let k = spec.kernel;
        let fan_in = cin / spec.groups * k * k;
        let weight = store.add(&format!("{name}.weight"), uniform_init(rng, &[cout, cin / spec.groups, k, k], fan_in));
        let bias = Some(store.add(&format!("{name}.bias"), uniform_init(rng, &[cout], fan_in)));
        Self { weight, bias, spec, in_channels: cin, out_channels: cout }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.spec)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        if let Some(b) = self.bias {
            store.get_mut(b).data_mut().fill(0.0);
        }
    }

    pub fn fill_bias(&self, store: &mut ParamStore, v: f64) {
        if let Some(b) = self.bias {
            store.get_mut(b).data_mut().fill(v);
        }
    }

    /// Sets every depthwise kernel (or the diagonal of a dense kernel) to a
    /// centred delta so the layer starts as the identity.
    pub fn identity(&self, store: &mut ParamStore) {
        self.zero(store);
        let k = self.spec.kernel;
        let per_group_in = self.in_channels / self.spec.groups;
        let w = store.get_mut(self.weight);
        for o in 0..self.out_channels {
            let i = if per_group_in == 1 { 0 } else { o % per_group_in };
            let at = ((o * per_group_in + i) * k + k / 2) * k + k / 2;
            w.data_mut()[at] = 1.0;
        }
    }

    /// Applies one weight entry.
    pub fn set_weight(&self, store: &mut ParamStore, o: usize, i: usize, ky: usize, kx: usize, v: f64) {
        let k = self.spec.kernel;
        let per_group_in = self.in_channels / self.spec.groups;
        store.get_mut(self.weight).data_mut()[((o * per_group_in + i) * k + ky) * k + kx] = v;
    }
}

/// Fully connected layer acting on `[c, 1, 1]` vectors.
#[derive(Debug, Clone)]
pub struct Linear(pub Conv2d);

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> Self {
        Self(Conv2d::new(store, rng, name, din, dout, ConvSpec::pointwise()))
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.0.forward(g, x)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        self.0.zero(store)
    }
}
