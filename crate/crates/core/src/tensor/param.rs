use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub adam: AdamState<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let n = value.numel();
        Self {
            name: name.into(),
            value,
            grad: None,
            adam: AdamState { m: alloc::vec![T::zero(); n], v: alloc::vec![T::zero(); n], step: 0 },
        }
    }

    /// Adds `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        match &mut self.grad {
            Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(Tensor { shape: self.value.shape().to_vec(), data: g.to_vec() }),
        }
    }
}

/// Ordered, uniquely named parameters of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidHyperparameter(alloc::format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                    adam: AdamState {
                        m: p.adam.m.iter().map(|v| U::of(v.as_f64())).collect(),
                        v: p.adam.v.iter().map(|v| U::of(v.as_f64())).collect(),
                        step: p.adam.step,
                    },
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// One bias-corrected Adam update of every parameter, then clears the gradients.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = params.params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let eps = T::of(cfg.eps);
    for p in &mut params.params {
        let grad = p.grad.take().expect("checked above");
        p.adam.step += 1;
        let t = p.adam.step as i32;
        let c1 = T::of(1.0 - Float::powi(cfg.beta1, t));
        let c2 = T::of(1.0 - Float::powi(cfg.beta2, t));
        let lr = T::of(cfg.lr);
        let state = &mut p.adam;
        for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
            state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
            state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
