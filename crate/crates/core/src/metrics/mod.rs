//! Evaluation metrics: identity-balanced retrieval scores, macro F1 for the
//! classification tasks, the aspect-balanced PIQ score and the long-tail
//! score LTS_k.

mod classification;
mod lts;
mod piq;
mod report;
mod retrieval;

use thiserror::Error;

pub use classification::{macro_f1_multilabel, macro_f1_single, ClassScore, TaskMetric};
pub use lts::{lts, LabelHistogram};
pub use piq::{piq, AspectScores, PiqInputs};
pub use report::{
    AppearanceScores, EmotionScores, EvaluationReport, PostureScores, ReidScores,
};
pub use retrieval::{
    average_precision, cosine_similarity, exclusion_set, macro_retrieval, rank_gallery,
    IdQueries, IdRetrieval, Ranked, RetrievalResult, RetrievalSummary,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("query has no relevant gallery item")]
    DegenerateQuery,
    #[error("relevance list has {found} relevant items but the total is {total}")]
    RelevantCountTooSmall { found: usize, total: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("excluded index {index} is outside a gallery of {len}")]
    ExcludedIndexOutOfRange { index: usize, len: usize },
    #[error("gallery index {index} is outside a gallery of {len}")]
    GalleryIndexOutOfRange { index: usize, len: usize },
    #[error("query identity `{0}` does not appear in the gallery")]
    QueryIdNotInGallery(String),
    #[error("no query survived evaluation")]
    EmptyQuerySet,
    #[error("prediction and ground truth lengths differ ({pred} vs {gt})")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no samples to score")]
    EmptyInput,
    #[error("label {index} out of range for cardinality {cardinality}")]
    LabelOutOfRange { index: usize, cardinality: usize },
    #[error("sample {0} has an empty ground-truth label set")]
    EmptyGroundTruthSet(usize),
    #[error("{name} = {value} is outside its valid range")]
    RangeError { name: &'static str, value: f64 },
    #[error("histogram has no samples")]
    EmptyHistogram,
}

/// Sum in ascending order so that the result does not depend on the order
/// in which the terms were produced.
pub(crate) fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn order_free_mean(mut values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    order_free_sum(&mut values) / n
}
