//! Task taxonomy and annotation validation.
//!
//! Portrait interpretation splits perception into three aspects. Appearance
//! covers gender, age, physique and height; Posture covers whole-body and
//! arm actions; Emotion covers facial expression, which is multi-label.
//! Identity retrieval sits beside the seven classification tasks and uses
//! the appearance part of the feature space.
//!
//! Label vocabularies come from a JSON config so that nothing downstream
//! depends on the exact class counts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the three perception groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    #[serde(alias = "Appearance")]
    Appearance,
    #[serde(alias = "Posture")]
    Posture,
    #[serde(alias = "Emotion")]
    Emotion,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Appearance, Aspect::Posture, Aspect::Emotion];
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aspect::Appearance => "appearance",
            Aspect::Posture => "posture",
            Aspect::Emotion => "emotion",
        })
    }
}

/// The seven classification sub-tasks, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Gender,
    Age,
    Physique,
    Height,
    Body,
    Arm,
    Expression,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Gender,
        Task::Age,
        Task::Physique,
        Task::Height,
        Task::Body,
        Task::Arm,
        Task::Expression,
    ];

    pub const APPEARANCE: [Task; 4] = [Task::Gender, Task::Age, Task::Physique, Task::Height];
    pub const POSTURE: [Task; 2] = [Task::Body, Task::Arm];

    pub fn name(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Age => "age",
            Task::Physique => "physique",
            Task::Height => "height",
            Task::Body => "body",
            Task::Arm => "arm",
            Task::Expression => "expression",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Position in [`Task::ALL`] and in every per-task vector of this crate.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn aspect(self) -> Aspect {
        match self {
            Task::Gender | Task::Age | Task::Physique | Task::Height => Aspect::Appearance,
            Task::Body | Task::Arm => Aspect::Posture,
            Task::Expression => Aspect::Emotion,
        }
    }

    pub fn is_multi_label(self) -> bool {
        self == Task::Expression
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDef {
    pub name: String,
    pub aspect: Aspect,
    pub labels: Vec<String>,
    pub multi_label: bool,
}

impl TaskDef {
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("expected 7 classification tasks, found {0}")]
    WrongTaskCount(usize),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` declared more than once")]
    DuplicateTask(String),
    #[error("task `{task}` must belong to aspect {expected}, found {found}")]
    WrongAspect {
        task: String,
        expected: Aspect,
        found: Aspect,
    },
    #[error("task `{task}` must have multi_label = {expected}")]
    MultiLabelFlag { task: String, expected: bool },
    #[error("task `{task}` needs at least 2 labels, found {found}")]
    TooFewLabels { task: String, found: usize },
    #[error("task `{task}` repeats label `{label}`")]
    DuplicateLabel { task: String, label: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaDocument {
    tasks: Vec<TaskDef>,
    #[serde(default = "default_true")]
    reid_enabled: bool,
}

fn default_true() -> bool {
    true
}

/// Validated task schema. Tasks are stored in [`Task::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSchema {
    tasks: Vec<TaskDef>,
    reid_enabled: bool,
}

const DEFAULT_SCHEMA: &str = include_str!("../config/default_schema.json");

impl TaskSchema {
    /// Builds a schema from task definitions, checking every invariant.
    /// Definitions may arrive in any order.
    pub fn new(tasks: Vec<TaskDef>, reid_enabled: bool) -> Result<Self, SchemaError> {
        if tasks.len() != Task::ALL.len() {
            return Err(SchemaError::WrongTaskCount(tasks.len()));
        }
        let mut slots: Vec<Option<TaskDef>> = vec![None; Task::ALL.len()];
        for def in tasks {
            let task = Task::from_name(&def.name)
                .ok_or_else(|| SchemaError::UnknownTask(def.name.clone()))?;
            if def.aspect != task.aspect() {
                return Err(SchemaError::WrongAspect {
                    task: def.name,
                    expected: task.aspect(),
                    found: def.aspect,
                });
            }
            if def.multi_label != task.is_multi_label() {
                return Err(SchemaError::MultiLabelFlag {
                    task: def.name,
                    expected: task.is_multi_label(),
                });
            }
            if def.labels.len() < 2 {
                return Err(SchemaError::TooFewLabels {
                    found: def.labels.len(),
                    task: def.name,
                });
            }
            let mut seen = HashSet::new();
            for label in &def.labels {
                if !seen.insert(label.as_str()) {
                    return Err(SchemaError::DuplicateLabel {
                        task: def.name.clone(),
                        label: label.clone(),
                    });
                }
            }
            let slot = &mut slots[task.index()];
            if slot.is_some() {
                return Err(SchemaError::DuplicateTask(def.name));
            }
            *slot = Some(def);
        }
        Ok(Self {
            tasks: slots.into_iter().map(|s| s.expect("7 distinct tasks")).collect(),
            reid_enabled,
        })
    }

    /// The shipped default vocabularies. The expression task has the seven
    /// basic expressions; other vocabularies are placeholders.
    pub fn default_schema() -> Self {
        Self::load(DEFAULT_SCHEMA).expect("shipped schema is valid")
    }

    pub fn load(document: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDocument = serde_json::from_str(document)?;
        Self::new(doc.tasks, doc.reid_enabled)
    }

    pub fn to_json(&self) -> String {
        let doc = SchemaDocument {
            tasks: self.tasks.clone(),
            reid_enabled: self.reid_enabled,
        };
        serde_json::to_string_pretty(&doc).expect("schema serializes")
    }

    pub fn tasks(&self) -> &[TaskDef] {
        &self.tasks
    }

    pub fn task(&self, task: Task) -> &TaskDef {
        &self.tasks[task.index()]
    }

    pub fn cardinality(&self, task: Task) -> usize {
        self.task(task).cardinality()
    }

    pub fn reid_enabled(&self) -> bool {
        self.reid_enabled
    }
}

impl Default for TaskSchema {
    fn default() -> Self {
        Self::default_schema()
    }
}

/// Labels of one image. `labels[t]` is the label-index set of task
/// `Task::ALL[t]`; single-label tasks hold exactly one index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleAnnotation {
    pub image_id: String,
    pub person_id: Option<String>,
    pub labels: Vec<Vec<usize>>,
}

impl SampleAnnotation {
    pub fn label_set(&self, task: Task) -> &[usize] {
        self.labels.get(task.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The single label of a single-label task, if exactly one is present.
    pub fn single_label(&self, task: Task) -> Option<usize> {
        match self.label_set(task) {
            [one] => Some(*one),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Query,
    Gallery,
}

impl Subset {
    pub fn parse(s: &str) -> Option<Subset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Subset::Train),
            "query" => Some(Subset::Query),
            "gallery" => Some(Subset::Gallery),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Query => "query",
            Subset::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub membership: BTreeMap<String, Subset>,
}

impl DatasetSplit {
    pub fn subset_of(&self, image_id: &str) -> Option<Subset> {
        self.membership.get(image_id).copied()
    }

    /// Image ids of one subset in ascending order.
    pub fn images_in(&self, subset: Subset) -> Vec<&str> {
        self.membership
            .iter()
            .filter(|(_, s)| **s == subset)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    DuplicateImageId,
    WrongTaskCount { found: usize },
    LabelOutOfRange { task: Task, index: usize, cardinality: usize },
    WrongLabelCount { task: Task, found: usize },
    MissingFromSplit,
    QueryIdNotInGallery { person_id: String },
    TrainTestIdOverlap { person_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub image_id: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.image_id)?;
        match &self.kind {
            ViolationKind::DuplicateImageId => write!(f, "image id appears more than once"),
            ViolationKind::WrongTaskCount { found } => {
                write!(f, "expected 7 task label sets, found {found}")
            }
            ViolationKind::LabelOutOfRange {
                task,
                index,
                cardinality,
            } => write!(f, "{task} label {index} out of range (cardinality {cardinality})"),
            ViolationKind::WrongLabelCount { task, found } => {
                write!(f, "{task} has {found} labels")
            }
            ViolationKind::MissingFromSplit => write!(f, "not assigned to any subset"),
            ViolationKind::QueryIdNotInGallery { person_id } => {
                write!(f, "query identity `{person_id}` has no gallery image")
            }
            ViolationKind::TrainTestIdOverlap { person_id } => {
                write!(f, "identity `{person_id}` appears in both train and test")
            }
        }
    }
}

/// Sorted list of violations; empty when every invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks label ranges, label counts and the split identity constraints.
/// Violations are sorted, so the result does not depend on record order.
pub fn validate_annotations(
    schema: &TaskSchema,
    records: &[SampleAnnotation],
    split: &DatasetSplit,
) -> ValidationReport {
    let mut violations = BTreeSet::new();
    let mut seen = HashSet::new();
    let mut push = |image_id: &str, kind| {
        violations.insert(Violation {
            image_id: image_id.to_string(),
            kind,
        });
    };

    for rec in records {
        if !seen.insert(rec.image_id.as_str()) {
            push(&rec.image_id, ViolationKind::DuplicateImageId);
        }
        if rec.labels.len() != Task::ALL.len() {
            push(
                &rec.image_id,
                ViolationKind::WrongTaskCount {
                    found: rec.labels.len(),
                },
            );
            continue;
        }
        for task in Task::ALL {
            let set = rec.label_set(task);
            let cardinality = schema.cardinality(task);
            let count_ok = if task.is_multi_label() {
                !set.is_empty()
            } else {
                set.len() == 1
            };
            if !count_ok {
                push(
                    &rec.image_id,
                    ViolationKind::WrongLabelCount {
                        task,
                        found: set.len(),
                    },
                );
            }
            for &index in set {
                if index >= cardinality {
                    push(
                        &rec.image_id,
                        ViolationKind::LabelOutOfRange {
                            task,
                            index,
                            cardinality,
                        },
                    );
                }
            }
        }
        if split.subset_of(&rec.image_id).is_none() {
            push(&rec.image_id, ViolationKind::MissingFromSplit);
        }
    }

    let mut ids_by_subset: BTreeMap<Subset, BTreeSet<&str>> = BTreeMap::new();
    for rec in records {
        if let (Some(pid), Some(subset)) = (&rec.person_id, split.subset_of(&rec.image_id)) {
            ids_by_subset.entry(subset).or_default().insert(pid.as_str());
        }
    }
    let empty = BTreeSet::new();
    let gallery_ids = ids_by_subset.get(&Subset::Gallery).unwrap_or(&empty);
    let query_ids = ids_by_subset.get(&Subset::Query).unwrap_or(&empty);

    for rec in records {
        let (Some(pid), Some(subset)) = (&rec.person_id, split.subset_of(&rec.image_id)) else {
            continue;
        };
        match subset {
            Subset::Query if !gallery_ids.contains(pid.as_str()) => push(
                &rec.image_id,
                ViolationKind::QueryIdNotInGallery {
                    person_id: pid.clone(),
                },
            ),
            Subset::Train
                if gallery_ids.contains(pid.as_str()) || query_ids.contains(pid.as_str()) =>
            {
                push(
                    &rec.image_id,
                    ViolationKind::TrainTestIdOverlap {
                        person_id: pid.clone(),
                    },
                )
            }
            _ => {}
        }
    }

    ValidationReport {
        violations: violations.into_iter().collect(),
    }
}
