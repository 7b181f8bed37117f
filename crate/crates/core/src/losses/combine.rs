//! Combining per-task losses.

use ndarray::{Array1, Array2};

use super::{LossError, LossResult};

/// Weight of the metric-learning loss relative to the classification loss.
pub const DEFAULT_ML_WEIGHT: f64 = 0.5;

/// Per-task loss: classification plus `weight` times metric learning.
///
/// # Panics
///
/// If `weight` is negative.
pub fn task_loss(cls: f64, ml: f64, weight: f64) -> f64 {
    assert!(weight >= 0.0, "metric-learning weight must be non-negative");
    cls + weight * ml
}

/// Learnable log-variances `s`, one per task.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyParams {
    pub s: Array1<f64>,
}

impl UncertaintyParams {
    pub fn new(s: Vec<f64>) -> Self {
        Self { s: Array1::from(s) }
    }

    pub fn zeros(tasks: usize) -> Self {
        Self {
            s: Array1::zeros(tasks),
        }
    }
}

/// `Σ_i exp(−s_i)·L_i + s_i`.
///
/// `grad_features` (1×n) holds ∂/∂L_i = exp(−s_i); `grad_aux` holds
/// ∂/∂s_i = 1 − exp(−s_i)·L_i, which vanishes at s_i = ln L_i.
pub fn total_loss_uncertainty(
    task_losses: &[f64],
    params: &UncertaintyParams,
) -> Result<LossResult, LossError> {
    if task_losses.len() != params.s.len() {
        return Err(LossError::DimensionMismatch(task_losses.len(), params.s.len()));
    }
    let mut value = 0.0;
    let mut grad_l = Vec::with_capacity(task_losses.len());
    let mut grad_s = Vec::with_capacity(task_losses.len());
    for (&l, &s) in task_losses.iter().zip(params.s.iter()) {
        let w = (-s).exp();
        value += w * l + s;
        grad_l.push(w);
        grad_s.push(1.0 - w * l);
    }
    Ok(LossResult {
        value,
        grad_features: Array2::from_shape_vec((1, grad_l.len()), grad_l).expect("1×n"),
        grad_aux: Some(Array1::from(grad_s)),
    })
}

pub fn total_loss_average(task_losses: &[f64]) -> Result<LossResult, LossError> {
    if task_losses.is_empty() {
        return Err(LossError::EmptyInput);
    }
    let n = task_losses.len() as f64;
    let value = task_losses.iter().sum::<f64>() / n;
    Ok(LossResult::vector(value, vec![1.0 / n; task_losses.len()]))
}
