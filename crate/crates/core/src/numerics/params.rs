use std::collections::HashMap;

use crate::error::{bail, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::tensor::{Real, Tensor};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

/// Named, ordered collection of parameter tensors with gradient slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            bail!(Config, "duplicate parameter name {name}");
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad: None, trainable: true });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Freeze or unfreeze every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Reset gradients of trainable parameters to zero (and drop grads of
    /// frozen ones).
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = p.trainable.then(|| Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add the parameter gradients from one backward pass into the grad slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc.add_assign(g)?,
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Same parameters at another precision. Gradients are dropped.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrite values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let Some(id) = other.id(&p.name) else {
                bail!(Config, "parameter {} missing from source", p.name);
            };
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                bail!(Dimension, "parameter {} shape {:?} vs {:?}", p.name, p.value.shape(), src.shape());
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub cfg: AdamConfig,
    steps: i32,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, steps: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Apply one update to every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            bail!(Contract, "adam step: parameter {} has no gradient", p.name);
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.steps);
        let bc2 = 1.0 - beta2.powi(self.steps);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one, lr_t, eps_t) = (T::one(), T::of(lr), T::of(eps));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        for (i, p) in store.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = p.grad.as_ref().expect("checked above").data();
            let m = self.m[i].get_or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v[i].get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (((w, &gi), mi), vi) in
                p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scalar(v: f32, g: Option<f32>) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v)).unwrap();
        s.get_mut(id).grad = g.map(Tensor::scalar);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_scalar(1.5, Some(0.0));
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.value(ParamId(0)).data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one_scalar(0.0, Some(1.0));
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut opt = Adam::new(cfg);
        opt.step(&mut s).unwrap();
        let w = s.value(ParamId(0)).data()[0];
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        assert!((w + 0.01).abs() < 1e-7, "{w}");
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let mut s = one_scalar(0.0, None);
        let mut opt = Adam::<f32>::new(AdamConfig::default());
        assert!(matches!(opt.step(&mut s), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut s = one_scalar(2.0, None);
        s.set_trainable("w", false);
        let mut opt = Adam::<f32>::new(AdamConfig::default());
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(ParamId(0)).data()[0], 2.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::scalar(0.0)).unwrap();
        assert!(s.add("a", Tensor::scalar(0.0)).is_err());
    }
}
