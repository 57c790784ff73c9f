//! Central finite-difference validation of reverse-mode gradients,
//! always in f64.

use ndarray::ArrayD;

use crate::tensor::Tensor;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude floor: when both gradients sit below it they count as
/// equal, since central differences cannot resolve true zeros from
/// roundoff noise.
pub const ABS_FLOOR: f64 = 1e-8;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() <= ABS_FLOOR && numeric.abs() <= ABS_FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the reverse-mode gradient of `f`'s scalar output with
/// central finite differences at the coordinates `indices` (linear,
/// row-major) of `x`. Empty `indices` checks every coordinate.
/// Returns the maximum relative error.
///
/// `f` is called repeatedly and must be a pure function of the leaf it
/// is given.
pub fn grad_check_at(
    f: &mut dyn FnMut(&Tensor<f64>) -> Tensor<f64>,
    x: &ArrayD<f64>,
    indices: &[usize],
) -> f64 {
    let leaf = Tensor::leaf(x.clone());
    let loss = f(&leaf);
    loss.backward();
    let analytic = leaf.grad();

    let all: Vec<usize>;
    let coords: &[usize] = if indices.is_empty() {
        all = (0..x.len()).collect();
        &all
    } else {
        indices
    };

    let mut eval = |values: &ArrayD<f64>| -> f64 {
        let leaf = Tensor::leaf(values.clone());
        f(&leaf).item()
    };

    let mut max_rel = 0.0f64;
    let flat_analytic: Vec<f64> = analytic.iter().cloned().collect();
    for &idx in coords {
        let mut plus = x.clone();
        let mut minus = x.clone();
        {
            let p = plus.as_slice_mut().expect("contiguous");
            p[idx] += FD_STEP;
            let m = minus.as_slice_mut().expect("contiguous");
            m[idx] -= FD_STEP;
        }
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        let rel = relative_error(flat_analytic[idx], numeric);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

/// Full-tensor variant of [`grad_check_at`].
pub fn grad_check(f: &mut dyn FnMut(&Tensor<f64>) -> Tensor<f64>, x: &ArrayD<f64>) -> f64 {
    grad_check_at(f, x, &[])
}

/// Validates gradients of every parameter in `store` against central
/// finite differences of the scalar loss produced by `build_loss`.
/// At most `samples_per_tensor` evenly spread coordinates are probed per
/// parameter tensor (0 probes all). Returns the maximum relative error.
///
/// `build_loss` must rebuild the same deterministic graph from the
/// current parameter values on every call.
pub fn grad_check_params(
    store: &crate::optim::ParamStore<f64>,
    build_loss: &mut dyn FnMut() -> Tensor<f64>,
    samples_per_tensor: usize,
) -> f64 {
    for (_, var) in store.iter() {
        var.zero_grad();
    }
    let loss = build_loss();
    loss.backward();

    let analytic: Vec<(String, ArrayD<f64>)> = store
        .iter()
        .map(|(name, var)| (name.to_string(), var.grad()))
        .collect();

    let mut max_rel = 0.0f64;
    for (name, grad) in &analytic {
        let len = grad.len();
        let n_probes = if samples_per_tensor == 0 {
            len
        } else {
            samples_per_tensor.min(len)
        };
        let flat: Vec<f64> = grad.iter().cloned().collect();
        for i in 0..n_probes {
            let idx = i * len / n_probes;
            let var = store.get(name).expect("param exists");
            let base = var.value();
            let mut probe = |delta: f64| -> f64 {
                let mut shifted = base.clone();
                shifted.as_slice_mut().expect("contiguous")[idx] += delta;
                var.set_value(shifted);
                let out = build_loss().item();
                var.set_value(base.clone());
                out
            };
            let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
            let rel = relative_error(flat[idx], numeric);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
