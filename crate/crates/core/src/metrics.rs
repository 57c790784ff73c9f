//! Regression quality measures. Accuracy works on raw pascals, the
//! squared-error measures on whatever scale the caller normalized to.

use crate::physics::{normalize_young, ModulusBounds};
use crate::{CoreError, Result};

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(CoreError::LengthMismatch(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::LengthMismatch("empty inputs".into()));
    }
    Ok(())
}

/// Fraction of pairs whose order-of-magnitude error is at most one
/// decade; a gap of exactly 1.0 still counts as correct.
pub fn log10_accuracy(pred_pa: &[f64], truth_pa: &[f64]) -> Result<f64> {
    check_lengths(pred_pa, truth_pa)?;
    let mut hits = 0usize;
    for (&p, &t) in pred_pa.iter().zip(truth_pa) {
        if !(p.is_finite() && p > 0.0) {
            return Err(CoreError::NonPositiveValue(p));
        }
        if !(t.is_finite() && t > 0.0) {
            return Err(CoreError::NonPositiveValue(t));
        }
        if (p.log10() - t.log10()).abs() <= 1.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / pred_pa.len() as f64)
}

/// Mean squared error; callers pass values already mapped to the
/// normalized modulus scale, so this is the N-MSE.
pub fn n_mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// N-MSE straight from pascals: log min-max normalization against
/// `bounds`, then mean squared error.
pub fn n_mse_pa(pred_pa: &[f64], truth_pa: &[f64], bounds: &ModulusBounds) -> Result<f64> {
    check_lengths(pred_pa, truth_pa)?;
    let mut pred = Vec::with_capacity(pred_pa.len());
    let mut truth = Vec::with_capacity(truth_pa.len());
    for (&p, &t) in pred_pa.iter().zip(truth_pa) {
        pred.push(normalize_young(p, bounds)?);
        truth.push(normalize_young(t, bounds)?);
    }
    n_mse(&pred, &truth)
}

/// Coefficient of determination on the given scale.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mean: f64 = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|&t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(CoreError::ConstantTruths);
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Across-seed aggregate: mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    if values.is_empty() {
        return MetricSummary { mean: f64::NAN, std: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    MetricSummary { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn accuracy_counts_boundary_as_hit() {
        // gaps of 0, exactly 1 and 2 decades
        let truth = [1e5, 1e5, 1e5];
        let pred = [1e5, 1e6, 1e7];
        let acc = log10_accuracy(&pred, &truth).unwrap();
        assert_relative_eq!(acc, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn accuracy_rejects_nonpositive() {
        assert!(matches!(
            log10_accuracy(&[0.0], &[1e5]),
            Err(CoreError::NonPositiveValue(_))
        ));
        assert!(matches!(
            log10_accuracy(&[1e5], &[-2.0]),
            Err(CoreError::NonPositiveValue(_))
        ));
    }

    #[test]
    fn n_mse_hand_case() {
        // one- and two-decade misses on the nine-decade scale
        let truth = [1.0 / 9.0, 2.0 / 9.0];
        let pred = [2.0 / 9.0, 4.0 / 9.0];
        let got = n_mse(&pred, &truth).unwrap();
        assert_relative_eq!(got, 5.0 / 162.0, max_relative = 1e-12);
    }

    #[test]
    fn n_mse_zero_for_exact() {
        assert_eq!(n_mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn n_mse_pa_hand_case() {
        let bounds = ModulusBounds::default();
        let got = n_mse_pa(&[1.0e5, 1.0e8], &[1.0e6, 1.0e6], &bounds).unwrap();
        assert_relative_eq!(got, 5.0 / 162.0, max_relative = 1e-12);
    }

    #[test]
    fn n_mse_pa_extremes_hit_one() {
        let bounds = ModulusBounds::default();
        let got = n_mse_pa(&[1.0e12], &[1.0e3], &bounds).unwrap();
        assert_relative_eq!(got, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn r_squared_hand_case() {
        // ss_res = 0.4 against ss_tot = 10
        let truth = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = 0.08f64.sqrt();
        let pred = [1.0 + d, 2.0 - d, 3.0 + d, 4.0 - d, 5.0 + d];
        assert_relative_eq!(r_squared(&pred, &truth).unwrap(), 0.96, max_relative = 1e-12);
    }

    #[test]
    fn r_squared_perfect_is_one() {
        let truth = [0.1, 0.5, 0.9];
        assert_relative_eq!(r_squared(&truth.to_vec(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn r_squared_constant_truths_rejected() {
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[3.0, 3.0]),
            Err(CoreError::ConstantTruths)
        ));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(n_mse(&[1.0], &[1.0, 2.0]), Err(CoreError::LengthMismatch(_))));
        assert!(matches!(n_mse(&[], &[]), Err(CoreError::LengthMismatch(_))));
    }

    #[test]
    fn summary_mean_and_sample_std() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.std, 1.0);
        let single = summarize(&[4.0]);
        assert_eq!(single.mean, 4.0);
        assert_eq!(single.std, 0.0);
    }
}
