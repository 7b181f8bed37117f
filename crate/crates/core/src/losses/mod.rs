//! Loss kernels with closed-form values and analytic gradients.
//!
//! Nothing here trains a network. Each kernel returns its value together
//! with the exact gradient so that the gradients can be checked against
//! central finite differences.

mod classification;
mod combine;
mod gradcheck;
mod metric;

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

pub use classification::{bce_multilabel, softmax_ce};
pub use combine::{
    task_loss, total_loss_average, total_loss_uncertainty, UncertaintyParams, DEFAULT_ML_WEIGHT,
};
pub use gradcheck::{finite_diff_check, run_loss_check, LossKind, GRADIENT_TOLERANCE};
pub use metric::{br_loss, triplet_loss_batch_hard, DEFAULT_TRIPLET_MARGIN};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("feature matrix contains a non-finite value")]
    NonFinite,
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("batch of {0} is too small; need at least 2 rows")]
    BatchTooSmall(usize),
    #[error("no anchor has both a positive and a negative")]
    NoValidTriplet,
    #[error("index {index} out of range for {len} outputs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty input")]
    EmptyInput,
}

/// Features with an optional class or identity label per row; `None` marks
/// a sample without a label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Array2<f64>,
    pub labels: Vec<Option<u64>>,
}

impl FeatureBatch {
    pub fn new(features: Array2<f64>, labels: Vec<Option<u64>>) -> Result<Self, LossError> {
        if features.nrows() == 0 {
            return Err(LossError::EmptyBatch);
        }
        if features.nrows() != labels.len() {
            return Err(LossError::LengthMismatch {
                features: features.nrows(),
                labels: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        Ok(Self { features, labels })
    }

    /// A single unlabeled row, for kernels that act on one vector.
    pub fn from_vector(values: &[f64]) -> Self {
        Self {
            features: Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("1×n"),
            labels: vec![None],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient of `value` with respect to the primary input, same shape.
    pub grad_features: Array2<f64>,
    /// Gradient with respect to auxiliary parameters, if any.
    pub grad_aux: Option<Array1<f64>>,
}

impl LossResult {
    fn vector(value: f64, grad: Vec<f64>) -> Self {
        let n = grad.len();
        Self {
            value,
            grad_features: Array2::from_shape_vec((1, n), grad).expect("1×n"),
            grad_aux: None,
        }
    }
}

pub fn normalize_rows(features: &Array2<f64>) -> Result<Array2<f64>, LossError> {
    let mut out = features.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(LossError::ZeroRow(i));
        }
        row /= norm;
    }
    Ok(out)
}

const UNIT_TOLERANCE: f64 = 1e-9;

/// |‖a − b‖ − √(2 − 2 cos(a, b))| for unit vectors; zero up to rounding,
/// since for unit vectors the Euclidean distance is a function of the
/// cosine alone.
pub fn euclid_cos_gap(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimensionMismatch(a.len(), b.len()));
    }
    for v in [a, b] {
        let norm = v.dot(&v).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(LossError::NotUnit(norm));
        }
    }
    let euclid = (&a - &b).mapv(|x| x * x).sum().sqrt();
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    Ok((euclid - (2.0 - 2.0 * cos).max(0.0).sqrt()).abs())
}
