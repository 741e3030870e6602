//! Named trainable parameters and their per-forward leasing onto a tape.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{err, Result};
use crate::rng::ChaCha8Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Stable handle to one named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Registry of all trainable tensors, in registration order. Names are
/// unique; registration order is the checkpoint record order.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(err!(Config, "duplicate parameter name {name:?}"));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Weight matrix `rows x cols`, Xavier-uniform in
    /// `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let limit = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| crate::rng::uniform(rng, -limit, limit)).collect();
        self.register(name, Tensor::new(alloc::vec![rows, cols], data)?)
    }

    /// Convolution kernels with fans computed over the receptive field.
    pub fn xavier_shaped(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| crate::rng::uniform(rng, -limit, limit)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    /// Embedding table, normal(0, 0.02).
    pub fn embedding(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| 0.02 * crate::rng::normal(rng)).collect();
        self.register(name, Tensor::new(alloc::vec![rows, cols], data)?)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.register(name, Tensor::filled(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }
}

/// One forward/backward lifetime: a tape plus the set of parameters leased
/// onto it. Leasing the same parameter twice returns the same [`Var`], so
/// gradients from every use accumulate in one place.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    leased: BTreeMap<usize, Var>,
    track_grads: bool,
}

impl<'a> Session<'a> {
    /// Session for training: leased parameters track gradients.
    pub fn new(store: &'a ParamStore) -> Self {
        Session { tape: Tape::new(), store, leased: BTreeMap::new(), track_grads: true }
    }

    /// Session for evaluation: forward-only, no gradient buffers.
    pub fn inference(store: &'a ParamStore) -> Self {
        Session { tape: Tape::new(), store, leased: BTreeMap::new(), track_grads: false }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Lease a parameter onto the tape (idempotent per session).
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leased.get(&id.0) {
            return v;
        }
        let mut t = self.store.value(id).clone();
        t.set_requires_grad(self.track_grads);
        let v = self.tape.leaf(t);
        self.leased.insert(id.0, v);
        v
    }

    /// Record a non-parameter input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.leaf(t)
    }

    /// Leased parameters with the grads accumulated by the last backward
    /// pass; parameters outside the active subgraph are omitted.
    pub fn gradients(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.leased
            .iter()
            .filter_map(|(&id, &var)| {
                self.tape.grad(var).map(|g| (ParamId(id), g.to_vec()))
            })
            .collect()
    }

    /// Every parameter leased during this session.
    pub fn leased(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.leased.iter().map(|(&id, &var)| (ParamId(id), var))
    }
}
