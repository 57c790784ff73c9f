//! Mean squared error with optional L2 parameter penalty:
//! `loss = mean((pred - target)^2) + l2_lambda * sum over params of p^2`.

use ndarray::ArrayD;

use crate::optim::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub l2_lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { l2_lambda: 0.0 }
    }
}

/// Scalar loss node. `target` is constant (no gradient flows into it).
pub fn mse_l2<F: Real>(
    pred: &Tensor<F>,
    target: &ArrayD<F>,
    store: &ParamStore<F>,
    cfg: &LossConfig,
) -> Result<Tensor<F>> {
    if pred.shape() != target.shape() {
        return Err(NnError::LengthMismatch(format!(
            "pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(NnError::LengthMismatch("empty prediction batch".into()));
    }
    let t = Tensor::leaf(target.clone());
    let n = F::from_f64(pred.len() as f64);
    let mse = pred.sub(&t)?.sumsq().scale(F::one() / n);
    if cfg.l2_lambda == 0.0 {
        return Ok(mse);
    }
    let penalty = store.l2_penalty().scale(F::from_f64(cfg.l2_lambda));
    mse.add(&penalty)
}
