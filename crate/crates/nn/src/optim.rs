//! Named parameter registry with Adam state. Iteration follows
//! registration order everywhere, which keeps update order and
//! serialization deterministic.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{NnError, Result};

pub struct Param<F: Real> {
    pub var: Tensor<F>,
    m: ArrayD<F>,
    v: ArrayD<F>,
}

pub struct ParamStore<F: Real> {
    params: IndexMap<String, Param<F>>,
    step: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
            step: 0,
        }
    }

    /// Registers `value` under `name` and returns its graph handle.
    pub fn register(&mut self, name: &str, value: ArrayD<F>) -> Result<Tensor<F>> {
        if self.params.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        let var = Tensor::leaf(value);
        self.params.insert(
            name.to_string(),
            Param {
                var: var.clone(),
                m,
                v,
            },
        );
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<Tensor<F>> {
        self.params.get(name).map(|p| p.var.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.var))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn tensor_count(&self) -> usize {
        self.params.len()
    }

    /// Total scalar parameter count.
    pub fn len(&self) -> usize {
        self.params.values().map(|p| p.var.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values() {
            p.var.zero_grad();
        }
    }

    /// Scalar graph node `sum over params of sum(p^2)`; empty store yields 0.
    pub fn l2_penalty(&self) -> Tensor<F> {
        let mut acc: Option<Tensor<F>> = None;
        for p in self.params.values() {
            let s = p.var.sumsq();
            acc = Some(match acc {
                None => s,
                Some(a) => a.add(&s).expect("scalar add"),
            });
        }
        acc.unwrap_or_else(|| Tensor::zeros(&[]))
    }

    /// One Adam update over all parameters, in registration order.
    /// Gradients are left untouched; call [`ParamStore::zero_grads`]
    /// before the next backward pass.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.params.values().any(|p| p.var.grad_seen()) {
            return Err(NnError::UninitializedGradients);
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let lr = F::from_f64(cfg.lr);
        let eps = F::from_f64(cfg.eps);
        let corr1 = F::from_f64(1.0 - cfg.beta1.powi(t));
        let corr2 = F::from_f64(1.0 - cfg.beta2.powi(t));
        let one = F::one();
        for p in self.params.values_mut() {
            let g = p.var.grad();
            ndarray::Zip::from(&mut p.m).and(&g).for_each(|m, &gv| {
                *m = b1 * *m + (one - b1) * gv;
            });
            ndarray::Zip::from(&mut p.v).and(&g).for_each(|v, &gv| {
                *v = b2 * *v + (one - b2) * gv * gv;
            });
            let mut value = p.var.value();
            ndarray::Zip::from(&mut value)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| {
                    let mhat = m / corr1;
                    let vhat = v / corr2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
            p.var.set_value(value);
        }
        Ok(())
    }

    /// Overwrites a parameter value (checkpoint restore). Shape must match.
    pub fn set_value(&mut self, name: &str, value: ArrayD<F>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if p.var.shape() != value.shape() {
            return Err(NnError::ShapeMismatch {
                op: "set_value",
                details: format!(
                    "param {name}: {:?} vs {:?}",
                    p.var.shape(),
                    value.shape()
                ),
            });
        }
        p.var.set_value(value);
        Ok(())
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<(String, ArrayD<F>)> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.var.value()))
            .collect()
    }

    /// Restores values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, snap: &[(String, ArrayD<F>)]) -> Result<()> {
        for (name, value) in snap {
            self.set_value(name, value.clone())?;
        }
        Ok(())
    }
}
