//! Macro F1 for single-label and multi-label classification tasks.

use super::{order_free_mean, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth occurrences.
    pub support: usize,
    /// Predicted occurrences.
    pub predicted: usize,
}

impl ClassScore {
    fn from_counts(tp: usize, support: usize, predicted: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support,
            predicted,
        }
    }

    /// A class that never occurs and is never predicted does not count
    /// towards the macro mean.
    pub fn is_included(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetric {
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

impl TaskMetric {
    fn from_classes(per_class: Vec<ClassScore>) -> Self {
        let included: Vec<f64> = per_class
            .iter()
            .filter(|c| c.is_included())
            .map(|c| c.f1)
            .collect();
        let macro_f1 = if included.is_empty() {
            0.0
        } else {
            order_free_mean(included)
        };
        Self { macro_f1, per_class }
    }
}

fn check_lengths(pred: usize, gt: usize) -> Result<(), MetricsError> {
    if pred != gt {
        return Err(MetricsError::LengthMismatch { pred, gt });
    }
    if gt == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

fn check_index(index: usize, cardinality: usize) -> Result<(), MetricsError> {
    if index >= cardinality {
        return Err(MetricsError::LabelOutOfRange { index, cardinality });
    }
    Ok(())
}

pub fn macro_f1_single(
    pred: &[usize],
    gt: &[usize],
    cardinality: usize,
) -> Result<TaskMetric, MetricsError> {
    check_lengths(pred.len(), gt.len())?;
    let mut tp = vec![0usize; cardinality];
    let mut support = vec![0usize; cardinality];
    let mut predicted = vec![0usize; cardinality];
    for (&p, &g) in pred.iter().zip(gt) {
        check_index(p, cardinality)?;
        check_index(g, cardinality)?;
        support[g] += 1;
        predicted[p] += 1;
        if p == g {
            tp[g] += 1;
        }
    }
    Ok(TaskMetric::from_classes(
        (0..cardinality)
            .map(|c| ClassScore::from_counts(tp[c], support[c], predicted[c]))
            .collect(),
    ))
}

/// One-vs-rest binary F1 per label, macro-averaged over labels that occur
/// in the ground truth or the predictions.
pub fn macro_f1_multilabel(
    pred: &[Vec<usize>],
    gt: &[Vec<usize>],
    cardinality: usize,
) -> Result<TaskMetric, MetricsError> {
    check_lengths(pred.len(), gt.len())?;
    let mut tp = vec![0usize; cardinality];
    let mut support = vec![0usize; cardinality];
    let mut predicted = vec![0usize; cardinality];
    let mut truth = vec![false; cardinality];
    let mut guess = vec![false; cardinality];
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if g.is_empty() {
            return Err(MetricsError::EmptyGroundTruthSet(i));
        }
        truth.fill(false);
        guess.fill(false);
        for &l in g {
            check_index(l, cardinality)?;
            truth[l] = true;
        }
        for &l in p {
            check_index(l, cardinality)?;
            guess[l] = true;
        }
        for l in 0..cardinality {
            support[l] += truth[l] as usize;
            predicted[l] += guess[l] as usize;
            tp[l] += (truth[l] && guess[l]) as usize;
        }
    }
    Ok(TaskMetric::from_classes(
        (0..cardinality)
            .map(|c| ClassScore::from_counts(tp[c], support[c], predicted[c]))
            .collect(),
    ))
}
