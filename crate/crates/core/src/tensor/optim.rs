//! Named parameters and momentum SGD.

use std::collections::HashMap;

use super::{Graph, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

/// Parameters in insertion order, addressable by id or unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateName(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.to_string(), value, grad: zeros.clone(), velocity: zeros });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Adds the graph's parameter gradients to the accumulators.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for (id, g) in graph.param_grads() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data().iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub grad_clip_norm: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 1e-3, momentum: 0.9, grad_clip_norm: 10.0 }
    }
}

/// One momentum SGD update from the accumulated gradients, which are
/// zeroed afterwards. Returns the pre-clipping gradient norm. A non-finite
/// gradient aborts before anything is modified.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, cfg: &SgdConfig) -> Result<f64> {
    if let Some(bad) = store.params.iter().find(|p| !p.grad.is_finite()) {
        return Err(TensorError::NonFiniteGradient(bad.name.clone()));
    }
    let norm = store.grad_norm();
    let scale = if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm { cfg.grad_clip_norm / norm } else { 1.0 };
    let (scale, mu, lr) = (T::from_f64(scale), T::from_f64(cfg.momentum), T::from_f64(cfg.lr));
    for p in &mut store.params {
        let Parameter { value, grad, velocity, .. } = p;
        for ((w, g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
            *v = mu * *v + scale * *g;
            *w = *w - lr * *v;
        }
    }
    store.zero_grads();
    Ok(norm)
}
