//! End-to-end evaluation: retrieval over query and gallery embeddings with
//! near-duplicate exclusion, macro F1 for every classification task, and
//! the aggregated report.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::dedup::GroupAssignment;
use crate::embedding::EmbeddingMatrix;
use crate::io::Prediction;
use crate::metrics::{
    exclusion_set, macro_f1_multilabel, macro_f1_single, macro_retrieval, rank_gallery, EvaluationReport,
    IdQueries, MetricsError, ReidScores, RetrievalResult, RetrievalSummary, TaskMetric,
};
use crate::schema::{validate_annotations, DatasetSplit, SampleAnnotation, Task, TaskSchema, ValidationReport};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("annotations failed validation with {} violation(s)", .0.violations.len())]
    InvalidAnnotations(ValidationReport),
    #[error("prediction for `{0}` has no ground-truth annotation")]
    PredictionWithoutTruth(String),
    #[error("image `{0}` has more than one prediction")]
    DuplicatePrediction(String),
    #[error("prediction for `{image_id}`: {task} needs exactly one label, found {found}")]
    PredictionLabelCount { image_id: String, task: Task, found: usize },
    #[error("prediction for `{image_id}`: {task} label {index} is out of range")]
    PredictionOutOfRange { image_id: String, task: Task, index: usize },
    #[error("no predictions to score")]
    NoPredictions,
    #[error("embedding row `{0}` has no annotation")]
    UnknownEmbeddingId(String),
    #[error("query embeddings have {query} dimensions, gallery embeddings {gallery}")]
    WidthMismatch { query: usize, gallery: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl EvaluateError {
    /// True when the inputs are well-formed but violate a data invariant.
    pub fn is_validation(&self) -> bool {
        !matches!(self, EvaluateError::WidthMismatch { .. })
    }
}

/// Everything an evaluation run consumes.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationInput<'a> {
    pub schema: &'a TaskSchema,
    pub annotations: &'a [SampleAnnotation],
    pub split: &'a DatasetSplit,
    pub predictions: &'a [Prediction],
    pub query: &'a EmbeddingMatrix,
    pub gallery: &'a EmbeddingMatrix,
    pub groups: Option<&'a GroupAssignment>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub retrieval: RetrievalSummary,
    /// One entry per task in canonical order.
    pub tasks: Vec<TaskMetric>,
}

fn check_prediction(schema: &TaskSchema, p: &Prediction) -> Result<(), EvaluateError> {
    for task in Task::ALL {
        let set = p.label_set(task);
        if !task.is_multi_label() && set.len() != 1 {
            return Err(EvaluateError::PredictionLabelCount {
                image_id: p.image_id.clone(),
                task,
                found: set.len(),
            });
        }
        if let Some(&index) = set.iter().find(|&&i| i >= schema.cardinality(task)) {
            return Err(EvaluateError::PredictionOutOfRange {
                image_id: p.image_id.clone(),
                task,
                index,
            });
        }
    }
    Ok(())
}

/// Macro F1 of every task over the images that have a prediction.
pub fn classification_metrics(
    schema: &TaskSchema,
    annotations: &[SampleAnnotation],
    predictions: &[Prediction],
) -> Result<Vec<TaskMetric>, EvaluateError> {
    if predictions.is_empty() {
        return Err(EvaluateError::NoPredictions);
    }
    let truth: HashMap<&str, &SampleAnnotation> = annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        if !seen.insert(p.image_id.as_str()) {
            return Err(EvaluateError::DuplicatePrediction(p.image_id.clone()));
        }
        check_prediction(schema, p)?;
        let gt = truth
            .get(p.image_id.as_str())
            .ok_or_else(|| EvaluateError::PredictionWithoutTruth(p.image_id.clone()))?;
        pairs.push((p, *gt));
    }

    Task::ALL
        .iter()
        .map(|&task| {
            let cardinality = schema.cardinality(task);
            let metric = if task.is_multi_label() {
                let pred: Vec<Vec<usize>> = pairs.iter().map(|(p, _)| p.label_set(task).to_vec()).collect();
                let gt: Vec<Vec<usize>> = pairs.iter().map(|(_, g)| g.label_set(task).to_vec()).collect();
                macro_f1_multilabel(&pred, &gt, cardinality)?
            } else {
                let pred: Vec<usize> = pairs.iter().map(|(p, _)| p.label_set(task)[0]).collect();
                let gt: Vec<usize> = pairs
                    .iter()
                    .map(|(_, g)| g.label_set(task)[0])
                    .collect();
                macro_f1_single(&pred, &gt, cardinality)?
            };
            Ok(metric)
        })
        .collect()
}

/// Ranks every identified query against the gallery, excluding gallery
/// images in the query's near-duplicate group, and reduces to macro
/// scores. Queries are ranked in parallel; the reduction order is fixed.
pub fn retrieval_metrics(
    annotations: &[SampleAnnotation],
    query: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    groups: Option<&GroupAssignment>,
) -> Result<RetrievalSummary, EvaluateError> {
    if query.dim() != gallery.dim() {
        return Err(EvaluateError::WidthMismatch {
            query: query.dim(),
            gallery: gallery.dim(),
        });
    }
    let person: HashMap<&str, Option<&str>> = annotations
        .iter()
        .map(|a| (a.image_id.as_str(), a.person_id.as_deref()))
        .collect();
    let lookup = |id: &str| -> Result<Option<&str>, EvaluateError> {
        person
            .get(id)
            .copied()
            .ok_or_else(|| EvaluateError::UnknownEmbeddingId(id.to_string()))
    };

    let gallery_labels: Vec<Option<String>> = gallery
        .ids
        .iter()
        .map(|id| lookup(id).map(|p| p.map(str::to_string)))
        .collect::<Result<_, _>>()?;

    let mut jobs = Vec::new();
    for (row, id) in query.ids.iter().enumerate() {
        if let Some(pid) = lookup(id)? {
            jobs.push((row, id.as_str(), pid));
        }
    }

    let empty = GroupAssignment::default();
    let groups = groups.unwrap_or(&empty);
    let ranked: Vec<(&str, RetrievalResult)> = jobs
        .par_iter()
        .map(|&(row, id, pid)| {
            let excluded = exclusion_set(id, groups, &gallery.ids);
            rank_gallery(id, query.rows.row(row), gallery.rows.view(), &excluded).map(|r| (pid, r))
        })
        .collect::<Result<_, _>>()?;

    let mut by_id: BTreeMap<&str, Vec<RetrievalResult>> = BTreeMap::new();
    for (pid, result) in ranked {
        by_id.entry(pid).or_default().push(result);
    }
    let queries: Vec<IdQueries> = by_id
        .into_iter()
        .map(|(pid, results)| IdQueries {
            person_id: pid.to_string(),
            results,
        })
        .collect();
    Ok(macro_retrieval(&queries, &gallery_labels)?)
}

/// Validates the annotations, then computes the full report.
pub fn evaluate(input: EvaluationInput<'_>) -> Result<Evaluation, EvaluateError> {
    let report = validate_annotations(input.schema, input.annotations, input.split);
    if !report.is_empty() {
        return Err(EvaluateError::InvalidAnnotations(report));
    }
    let retrieval = retrieval_metrics(input.annotations, input.query, input.gallery, input.groups)?;
    let tasks = classification_metrics(input.schema, input.annotations, input.predictions)?;
    let f1: [f64; 7] = std::array::from_fn(|i| tasks[i].macro_f1);
    let report = EvaluationReport::new(
        ReidScores {
            macro_map: retrieval.macro_map,
            macro_rank1: retrieval.macro_rank1,
            macro_rank5: retrieval.macro_rank5,
        },
        f1,
    )?;
    Ok(Evaluation {
        report,
        retrieval,
        tasks,
    })
}
