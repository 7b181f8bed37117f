//! Splitting a D-dimensional feature vector into per-task ranges.
//!
//! The vector is cut into nine contiguous slots: the four appearance tasks,
//! a residual appearance region, one region for each posture task, a region
//! shared by both posture tasks, and the expression region. Slot sizes are
//! proportional to the number of labels of the related task, apportioned by
//! the largest-remainder method with at least one dimension per slot.
//!
//! ```
//! use portrait_core::allocator::{plan_allocation, Slot};
//! use portrait_core::schema::TaskSchema;
//!
//! let alloc = plan_allocation(16, &TaskSchema::default(), None, None).unwrap();
//! assert_eq!(alloc.range(Slot::Expression), 13..16);
//! assert_eq!(alloc.view_width("reid").unwrap(), 7);
//! ```

use std::fmt;
use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::schema::{Task, TaskSchema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("{dims} dimensions cannot give every one of the {slots} slots a dimension", slots = Slot::ALL.len())]
    TooFewDims { dims: usize },
    #[error("weight of slot `{0}` must be positive")]
    ZeroWeight(Slot),
    #[error("feature matrix has {found} columns, allocation expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown view `{0}`")]
    UnknownView(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Gender,
    Age,
    Physique,
    Height,
    AppearanceResidual,
    BodyOwn,
    ArmOwn,
    PostureShared,
    Expression,
}

impl Slot {
    /// Slots in layout order.
    pub const ALL: [Slot; 9] = [
        Slot::Gender,
        Slot::Age,
        Slot::Physique,
        Slot::Height,
        Slot::AppearanceResidual,
        Slot::BodyOwn,
        Slot::ArmOwn,
        Slot::PostureShared,
        Slot::Expression,
    ];

    pub const APPEARANCE: [Slot; 5] = [
        Slot::Gender,
        Slot::Age,
        Slot::Physique,
        Slot::Height,
        Slot::AppearanceResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Gender => "gender",
            Slot::Age => "age",
            Slot::Physique => "physique",
            Slot::Height => "height",
            Slot::AppearanceResidual => "appearance_residual",
            Slot::BodyOwn => "body_own",
            Slot::ArmOwn => "arm_own",
            Slot::PostureShared => "posture_shared",
            Slot::Expression => "expression",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Largest-remainder apportionment of `total` units over `weights`.
///
/// Each slot first receives `floor(total·w/W)`; the units left over go to
/// the largest remainders, ties resolved by slot order. Slots that end up
/// with nothing are pinned to one unit and the rest is apportioned again
/// among the others, until every slot has at least one.
///
/// # Panics
///
/// If `total < weights.len()` or any weight is zero.
pub fn apportion(total: usize, weights: &[u64]) -> Vec<usize> {
    assert!(total >= weights.len(), "not enough units for the floor");
    assert!(weights.iter().all(|&w| w > 0), "weights must be positive");
    let mut pinned = vec![false; weights.len()];
    loop {
        let free: Vec<usize> = (0..weights.len()).filter(|&i| !pinned[i]).collect();
        let budget = (total - (weights.len() - free.len())) as u128;
        let weight_sum: u128 = free.iter().map(|&i| weights[i] as u128).sum();

        let mut out: Vec<usize> = vec![1; weights.len()];
        let mut remainders = Vec::with_capacity(free.len());
        let mut handed_out = 0u128;
        for &i in &free {
            let scaled = budget * weights[i] as u128;
            let whole = scaled / weight_sum;
            out[i] = whole as usize;
            handed_out += whole;
            remainders.push((scaled % weight_sum, i));
        }
        // largest remainder first, earlier slot on ties
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take((budget - handed_out) as usize) {
            out[i] += 1;
        }

        let empty: Vec<usize> = free.iter().copied().filter(|&i| out[i] == 0).collect();
        if empty.is_empty() {
            return out;
        }
        for i in empty {
            pinned[i] = true;
        }
    }
}

/// The nine slot ranges of a feature vector of width `total_dims`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureAllocation {
    total_dims: usize,
    slots: [Range<usize>; 9],
}

impl FeatureAllocation {
    /// Lays out slots of the given widths (in [`Slot::ALL`] order) back to
    /// back from index 0.
    pub fn from_widths(widths: [usize; 9]) -> Self {
        let mut start = 0;
        let slots = widths.map(|w| {
            let r = start..start + w;
            start += w;
            r
        });
        Self {
            total_dims: start,
            slots,
        }
    }

    pub fn total_dims(&self) -> usize {
        self.total_dims
    }

    pub fn range(&self, slot: Slot) -> Range<usize> {
        self.slots[slot.index()].clone()
    }

    pub fn width(&self, slot: Slot) -> usize {
        self.slots[slot.index()].len()
    }

    pub fn widths(&self) -> [usize; 9] {
        Slot::ALL.map(|s| self.width(s))
    }

    /// Index ranges of a named view, ascending and merged where adjacent.
    ///
    /// Accepted names: every slot name, every task name, `reid` (alias
    /// `appearance`), `posture` and `emotion`. The task names `body` and
    /// `arm` include the shared posture slot.
    pub fn view(&self, name: &str) -> Result<Vec<Range<usize>>, AllocError> {
        let slots: Vec<Slot> = match name {
            "reid" | "appearance" => Slot::APPEARANCE.to_vec(),
            "body" => vec![Slot::BodyOwn, Slot::PostureShared],
            "arm" => vec![Slot::ArmOwn, Slot::PostureShared],
            "posture" => vec![Slot::BodyOwn, Slot::ArmOwn, Slot::PostureShared],
            "emotion" => vec![Slot::Expression],
            other => match Slot::from_name(other) {
                Some(slot) => vec![slot],
                None => return Err(AllocError::UnknownView(other.to_string())),
            },
        };
        let mut ranges: Vec<Range<usize>> = Vec::new();
        for slot in slots {
            let r = self.range(slot);
            match ranges.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => ranges.push(r),
            }
        }
        Ok(ranges)
    }

    /// Column indices of a view, ascending.
    pub fn view_indices(&self, name: &str) -> Result<Vec<usize>, AllocError> {
        Ok(self.view(name)?.into_iter().flatten().collect())
    }

    pub fn view_width(&self, name: &str) -> Result<usize, AllocError> {
        Ok(self.view(name)?.iter().map(|r| r.len()).sum())
    }

    /// Feature columns used by a classification task's classifier.
    pub fn task_view(&self, task: Task) -> Vec<Range<usize>> {
        self.view(task.name()).expect("every task name is a view")
    }

    /// Pretty JSON with each range on one line.
    pub fn to_json(&self) -> String {
        let mut s = format!("{{\n  \"total_dims\": {},\n  \"slots\": {{\n", self.total_dims);
        let slots: Vec<String> = Slot::ALL
            .iter()
            .map(|&slot| {
                let r = self.range(slot);
                format!("    \"{}\": {}", slot.name(), compact(&[r.start, r.end]))
            })
            .collect();
        s.push_str(&slots.join(",\n"));
        s.push_str("\n  },\n  \"views\": {\n");
        let views: Vec<String> = ["reid", "body", "arm"]
            .iter()
            .map(|name| {
                let ranges = self.view(name).expect("built-in view");
                format!("    \"{name}\": {}", compact(&Ranges(&ranges)))
            })
            .collect();
        s.push_str(&views.join(",\n"));
        s.push_str("\n  }\n}\n");
        s
    }
}

/// Single-line JSON with a space after each comma.
fn compact<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("ranges serialize").replace(',', ", ")
}

struct Ranges<'a>(&'a [Range<usize>]);

impl Serialize for Ranges<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(|r| [r.start, r.end]))
    }
}

struct SlotMap<'a>(&'a FeatureAllocation);

impl Serialize for SlotMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(Slot::ALL.len()))?;
        for slot in Slot::ALL {
            let r = self.0.range(slot);
            map.serialize_entry(slot.name(), &[r.start, r.end])?;
        }
        map.end()
    }
}

struct ViewMap<'a>(&'a FeatureAllocation);

impl Serialize for ViewMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        for name in ["reid", "body", "arm"] {
            let ranges = self.0.view(name).expect("built-in view");
            map.serialize_entry(name, &Ranges(&ranges))?;
        }
        map.end()
    }
}

impl Serialize for FeatureAllocation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("total_dims", &self.total_dims)?;
        map.serialize_entry("slots", &SlotMap(self))?;
        map.serialize_entry("views", &ViewMap(self))?;
        map.end()
    }
}

/// Slot weights derived from a schema, in [`Slot::ALL`] order.
///
/// The residual weight defaults to the rounded mean cardinality of the four
/// appearance tasks, the shared weight to the smaller of the two posture
/// cardinalities.
pub fn slot_weights(schema: &TaskSchema, residual_weight: Option<u64>, shared_weight: Option<u64>) -> [u64; 9] {
    let card = |t: Task| schema.cardinality(t) as u64;
    let appearance_sum: u64 = Task::APPEARANCE.iter().map(|&t| card(t)).sum();
    let residual = residual_weight.unwrap_or((2 * appearance_sum + 4) / 8);
    let shared = shared_weight.unwrap_or(card(Task::Body).min(card(Task::Arm)));
    [
        card(Task::Gender),
        card(Task::Age),
        card(Task::Physique),
        card(Task::Height),
        residual,
        card(Task::Body),
        card(Task::Arm),
        shared,
        card(Task::Expression),
    ]
}

/// Apportions `total_dims` over explicit slot weights.
pub fn allocate(total_dims: usize, weights: [u64; 9]) -> Result<FeatureAllocation, AllocError> {
    if total_dims < Slot::ALL.len() {
        return Err(AllocError::TooFewDims { dims: total_dims });
    }
    if let Some(slot) = Slot::ALL.into_iter().find(|s| weights[s.index()] == 0) {
        return Err(AllocError::ZeroWeight(slot));
    }
    let widths = apportion(total_dims, &weights);
    Ok(FeatureAllocation::from_widths(
        widths.try_into().expect("one width per slot"),
    ))
}

pub fn plan_allocation(
    total_dims: usize,
    schema: &TaskSchema,
    residual_weight: Option<u64>,
    shared_weight: Option<u64>,
) -> Result<FeatureAllocation, AllocError> {
    allocate(total_dims, slot_weights(schema, residual_weight, shared_weight))
}

/// The columns of `view`, in ascending index order.
pub fn project(features: ArrayView2<f64>, alloc: &FeatureAllocation, view: &str) -> Result<Array2<f64>, AllocError> {
    if features.ncols() != alloc.total_dims() {
        return Err(AllocError::DimensionMismatch {
            expected: alloc.total_dims(),
            found: features.ncols(),
        });
    }
    let cols = alloc.view_indices(view)?;
    Ok(features.select(Axis(1), &cols))
}
