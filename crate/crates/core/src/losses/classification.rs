//! Classification losses on a single logit vector.

use super::{LossError, LossResult};

/// Cross-entropy of a softmax over `logits`; gradient `softmax − onehot`.
pub fn softmax_ce(logits: &[f64], target: usize) -> Result<LossResult, LossError> {
    if logits.is_empty() {
        return Err(LossError::EmptyInput);
    }
    if target >= logits.len() {
        return Err(LossError::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, z)| (z - lse).exp() - if i == target { 1.0 } else { 0.0 })
        .collect();
    Ok(LossResult::vector(lse - logits[target], grad))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with sigmoid over all labels; labels in
/// `targets` are positive.
pub fn bce_multilabel(logits: &[f64], targets: &[usize]) -> Result<LossResult, LossError> {
    let n = logits.len();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let mut positive = vec![false; n];
    for &t in targets {
        if t >= n {
            return Err(LossError::IndexOutOfRange { index: t, len: n });
        }
        positive[t] = true;
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&x, &pos) in logits.iter().zip(&positive) {
        let y = if pos { 1.0 } else { 0.0 };
        // log(1 + e^x) − x·y, written to avoid overflow
        value += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / n as f64);
    }
    Ok(LossResult::vector(value / n as f64, grad))
}
