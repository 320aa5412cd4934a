//! Named trainable arrays with mirrored gradient buffers, plus the Adam
//! update rule used by the training loop.
//!
//! Parameters live in flat Euclidean space; manifold structure enters only
//! through the forward computation. Iteration order is registration order,
//! which keeps updates and checkpoint layout deterministic.

use super::Tensor;
use crate::scalar::Real;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param<F> {
    name: String,
    value: Tensor<F>,
    grad: Tensor<F>,
}

/// Ordered collection of named parameters and their gradient buffers.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<F>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter {name} registered twice"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        let id = ParamId(self.params.len() - 1);
        self.by_name.insert(name.to_string(), id.0);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = F::zero();
            }
        }
    }

    /// `grad[id] += scale · delta`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor<F>, scale: F) {
        let g = &mut self.params[id.0].grad;
        assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch");
        for (t, &d) in g.data_mut().iter_mut().zip(delta.data()) {
            *t += d * scale;
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Flatten all values into one vector (registration order).
    pub fn flatten_values(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Flatten all gradients into one vector (registration order).
    pub fn flatten_grads(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    /// Overwrite all values from one flat vector (registration order).
    pub fn unflatten_values(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.scalar_count(), "flat length mismatch");
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

/// Adam hyperparameters. Defaults match the fixed training configuration:
/// step 1e-3, β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam state: first/second moment estimates per parameter entry.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<F>) {
        if self.m.is_empty() {
            for id in store.ids().collect::<Vec<_>>() {
                self.m.push(vec![F::zero(); store.value(id).len()]);
                self.v.push(vec![F::zero(); store.value(id).len()]);
            }
        }
        self.t += 1;
        let b1 = F::of(self.cfg.beta1);
        let b2 = F::of(self.cfg.beta2);
        let eps = F::of(self.cfg.epsilon);
        let bc1 = F::one() - F::of(self.cfg.beta1.powi(self.t as i32));
        let bc2 = F::one() - F::of(self.cfg.beta2.powi(self.t as i32));
        let lr = F::of(self.cfg.step_size);
        for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let value = store.value_mut(id);
            for (i, &g) in grad.iter().enumerate() {
                let m = &mut self.m[idx][i];
                let v = &mut self.v[idx][i];
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
