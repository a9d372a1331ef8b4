use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericsError, Scalar, Tensor};

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Named parameters plus their Adam state. Iteration order is by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        let moments = Moments {
            m: Tensor::zeros(value.shape()),
            v: Tensor::zeros(value.shape()),
        };
        self.moments.insert(name.clone(), moments);
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    pub(crate) fn set_state(&mut self, name: &str, m: Tensor<T>, v: Tensor<T>) -> Result<(), NumericsError> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| NumericsError::InvalidArgument(format!("unknown parameter {name}")))?;
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(NumericsError::shape("param_store", format!("moment shape for {name}")));
        }
        self.moments.insert(name.to_string(), Moments { m, v });
        Ok(())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copies values into another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, v) in &self.params {
            out.insert(k.clone(), v.cast());
        }
        out
    }

    /// One bias-corrected Adam update. Every parameter must have a
    /// gradient of matching shape; the step counter advances once.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, cfg: &AdamConfig) -> Result<(), NumericsError> {
        for (name, p) in &self.params {
            let g = grads
                .get(name)
                .ok_or_else(|| NumericsError::InvalidArgument(format!("missing gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(NumericsError::shape(
                    "adam_step",
                    format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let corr1 = T::of(1.0 - cfg.beta1.powi(t));
        let corr2 = T::of(1.0 - cfg.beta2.powi(t));
        let lr = T::of(cfg.lr);
        let eps = T::of(cfg.eps);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let st = self.moments.get_mut(name).expect("moments track params");
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
