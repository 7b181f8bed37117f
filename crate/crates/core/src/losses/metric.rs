//! Metric-learning losses on direction-normalized features.

use ndarray::Array2;

use super::{normalize_rows, FeatureBatch, LossError, LossResult};

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Maps a gradient with respect to the unit rows `u = f / ‖f‖` back to the
/// raw rows: `(I − u uᵀ) g / ‖f‖`.
fn through_normalization(raw: &Array2<f64>, unit: &Array2<f64>, grad_unit: Array2<f64>) -> Array2<f64> {
    let mut out = grad_unit;
    for ((mut g, u), f) in out
        .rows_mut()
        .into_iter()
        .zip(unit.rows())
        .zip(raw.rows())
    {
        let norm = f.dot(&f).sqrt();
        let radial = u.dot(&g);
        g.zip_mut_with(&u, |gi, &ui| *gi = (*gi - radial * ui) / norm);
    }
    out
}

/// Batch Rank loss.
///
/// Every labeled sample is an anchor; each same-label sample is scored by
/// the softmax of its cosine similarity against all other samples of the
/// batch, unlabeled ones included:
///
/// `L = (1/N) Σ_i Σ_{j≠i, y_j = y_i} −log( exp(cos(f_i, f_j)) / Σ_{c≠i} exp(cos(f_i, f_c)) )`
///
/// Anchors without positives add nothing, and the normalizer stays the
/// batch size. There are no hyperparameters.
pub fn br_loss(batch: &FeatureBatch) -> Result<LossResult, LossError> {
    let n = batch.len();
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    let unit = normalize_rows(&batch.features)?;
    let sim = unit.dot(&unit.t());
    let scale = 1.0 / n as f64;

    // coefficient of sim[i][c] in the loss
    let mut coeff = Array2::<f64>::zeros((n, n));
    let mut value = 0.0;
    for i in 0..n {
        let Some(label) = batch.labels[i] else { continue };
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && batch.labels[j] == Some(label))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let others = (0..n).filter(move |&c| c != i);
        let lse = log_sum_exp(others.clone().map(|c| sim[[i, c]]));
        let m = positives.len() as f64;
        for &j in &positives {
            value += lse - sim[[i, j]];
        }
        for c in others {
            coeff[[i, c]] += scale * m * (sim[[i, c]] - lse).exp();
        }
        for &j in &positives {
            coeff[[i, j]] -= scale;
        }
    }
    value *= scale;

    // d sim[i][c] / d u_i = u_c and / d u_c = u_i
    let grad_unit = coeff.dot(&unit) + coeff.t().dot(&unit);
    Ok(LossResult {
        value,
        grad_features: through_normalization(&batch.features, &unit, grad_unit),
        grad_aux: None,
    })
}

fn distance(unit: &Array2<f64>, i: usize, j: usize) -> f64 {
    unit.row(i)
        .iter()
        .zip(unit.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Batch-hard triplet loss on normalized features with Euclidean distance.
///
/// For each labeled anchor with at least one positive and one labeled
/// negative, the farthest positive and the nearest negative form the
/// triplet; the hinged terms are averaged over those anchors. Unlabeled
/// rows are neither positives nor negatives.
pub fn triplet_loss_batch_hard(batch: &FeatureBatch, margin: f64) -> Result<LossResult, LossError> {
    let n = batch.len();
    let unit = normalize_rows(&batch.features)?;
    let dist = Array2::from_shape_fn((n, n), |(i, j)| distance(&unit, i, j));

    let mut active = Vec::new();
    let mut anchors = 0usize;
    let mut value = 0.0;
    for a in 0..n {
        let Some(label) = batch.labels[a] else { continue };
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..n {
            match batch.labels[j] {
                Some(l) if l == label && j != a && hardest_pos.is_none_or(|p| dist[[a, j]] > dist[[a, p]]) => {
                    hardest_pos = Some(j);
                }
                Some(l) if l != label && hardest_neg.is_none_or(|q| dist[[a, j]] < dist[[a, q]]) => {
                    hardest_neg = Some(j);
                }
                _ => {}
            }
        }
        let (Some(p), Some(q)) = (hardest_pos, hardest_neg) else { continue };
        anchors += 1;
        let term = dist[[a, p]] - dist[[a, q]] + margin;
        if term > 0.0 {
            value += term;
            active.push((a, p, q));
        }
    }
    if anchors == 0 {
        return Err(LossError::NoValidTriplet);
    }
    let scale = 1.0 / anchors as f64;

    let mut grad_unit = Array2::<f64>::zeros(unit.raw_dim());
    let mut push = |from: usize, to: usize, sign: f64| {
        let d = dist[[from, to]];
        if d == 0.0 {
            return;
        }
        for k in 0..unit.ncols() {
            let g = sign * scale * (unit[[from, k]] - unit[[to, k]]) / d;
            grad_unit[[from, k]] += g;
            grad_unit[[to, k]] -= g;
        }
    };
    for (a, p, q) in active {
        push(a, p, 1.0);
        push(a, q, -1.0);
    }
    Ok(LossResult {
        value: value * scale,
        grad_features: through_normalization(&batch.features, &unit, grad_unit),
        grad_aux: None,
    })
}
