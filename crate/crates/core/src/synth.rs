//! Synthetic datasets with known structure, and brute-force reference
//! implementations of the retrieval and long-tail metrics.
//!
//! Identities get unit centroids placed by seeded rejection sampling so
//! that no two centroids are closer than a requested cosine gap. Samples
//! are the centroid plus isotropic Gaussian noise, renormalized. Every
//! identity draws from its own ChaCha stream, so output does not depend on
//! how many threads generate it.
//!
//! The oracles count ranks directly or enumerate every subset, so the fast
//! implementations can be audited against them.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dedup::GroupAssignment;
use crate::embedding::EmbeddingMatrix;
use crate::io::Prediction;
use crate::metrics::{lts, LabelHistogram, MetricsError};
use crate::schema::{DatasetSplit, SampleAnnotation, Subset, Task, TaskSchema};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place {num_ids} centroids in {dim} dimensions with cosine gap {gap}")]
    InfeasibleSeparation { num_ids: usize, dim: usize, gap: f64 },
    #[error("exhaustive search over {0} classes is too large (limit {MAX_ORACLE_CLASSES})")]
    TooLarge(usize),
    #[error("no long-tail profile reaches LTS {target} (closest {best})")]
    UnreachableLts { target: f64, best: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Largest histogram [`oracle_lts`] will enumerate.
pub const MAX_ORACLE_CLASSES: usize = 20;

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Samples per identity.
#[derive(Debug, Clone, PartialEq)]
pub enum CountProfile {
    /// One count per identity.
    Explicit(Vec<usize>),
    /// Identity `i` (0-based) gets `max(1, round(head · (i+1)^(−exponent)))`.
    LongTail { head: usize, exponent: f64 },
}

impl CountProfile {
    pub fn counts(&self, num_ids: usize) -> Vec<usize> {
        match self {
            CountProfile::Explicit(c) => c.clone(),
            CountProfile::LongTail { head, exponent } => long_tail_counts(num_ids, *head, *exponent),
        }
    }
}

pub fn long_tail_counts(num_ids: usize, head: usize, exponent: f64) -> Vec<usize> {
    (0..num_ids)
        .map(|i| ((head as f64) * ((i + 1) as f64).powf(-exponent)).round().max(1.0) as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_ids: usize,
    pub counts: CountProfile,
    pub dim: usize,
    /// Minimum gap `1 − cos` between any two identity centroids.
    pub sigma_between: f64,
    /// Standard deviation of the per-coordinate sample noise.
    pub sigma_within: f64,
    pub seed: u64,
    /// Samples without a person id; they land in the gallery as distractors.
    pub num_unidentified: usize,
    /// Fraction of identities held out for query/gallery evaluation.
    pub test_fraction: f64,
    /// Queries taken from each test identity that has enough samples.
    pub queries_per_id: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_ids: 20,
            counts: CountProfile::LongTail {
                head: 12,
                exponent: 0.5,
            },
            dim: 32,
            sigma_between: 0.5,
            sigma_within: 0.1,
            seed: 0,
            num_unidentified: 10,
            test_fraction: 0.5,
            queries_per_id: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.num_ids == 0 {
            return bad("at least one identity is required".into());
        }
        if self.dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        let counts = self.counts.counts(self.num_ids);
        if counts.len() != self.num_ids {
            return bad(format!("{} counts given for {} identities", counts.len(), self.num_ids));
        }
        if counts.contains(&0) {
            return bad("every identity needs at least one sample".into());
        }
        if self.sigma_between.is_nan() || self.sigma_between <= 0.0 {
            return bad("sigma_between must be positive".into());
        }
        if !self.sigma_within.is_finite() || self.sigma_within < 0.0 {
            return bad("sigma_within must be a non-negative number".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1]".into());
        }
        if self.queries_per_id == 0 {
            return bad("queries_per_id must be positive".into());
        }
        Ok(())
    }
}

/// A generated dataset; rows of `embeddings` follow `annotations`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub embeddings: EmbeddingMatrix,
    pub annotations: Vec<SampleAnnotation>,
    pub split: DatasetSplit,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn place_centroids(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Array1<f64>>, SynthError> {
    let infeasible = || SynthError::InfeasibleSeparation {
        num_ids: spec.num_ids,
        dim: spec.dim,
        gap: spec.sigma_between,
    };
    let max_cos = 1.0 - spec.sigma_between;
    // n unit vectors always have some pair with cosine ≥ −1/(n−1)
    if spec.num_ids > 1 && max_cos < -1.0 / (spec.num_ids - 1) as f64 {
        return Err(infeasible());
    }
    let mut centroids: Vec<Array1<f64>> = Vec::with_capacity(spec.num_ids);
    while centroids.len() < spec.num_ids {
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let c = unit_vector(rng, spec.dim);
            centroids.iter().all(|o| o.dot(&c) <= max_cos).then_some(c)
        });
        centroids.push(placed.ok_or_else(infeasible)?);
    }
    Ok(centroids)
}

fn noisy_sample(rng: &mut ChaCha8Rng, centroid: ArrayView1<f64>, sigma: f64) -> Array1<f64> {
    if sigma == 0.0 {
        return centroid.to_owned();
    }
    loop {
        let v: Array1<f64> = centroid.iter().map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn draw_expression(rng: &mut ChaCha8Rng, cardinality: usize) -> Vec<usize> {
    let primary = rng.random_range(0..cardinality);
    let mut set: Vec<usize> = (0..cardinality).filter(|&c| c == primary || rng.random_bool(0.1)).collect();
    set.sort_unstable();
    set
}

/// Labels for one sample: `appearance` fixed per identity, the rest drawn.
fn draw_labels(rng: &mut ChaCha8Rng, schema: &TaskSchema, appearance: &[usize]) -> Vec<Vec<usize>> {
    Task::ALL
        .iter()
        .map(|&task| match task {
            t if Task::APPEARANCE.contains(&t) => vec![appearance[t.index()]],
            Task::Expression => draw_expression(rng, schema.cardinality(task)),
            t => vec![rng.random_range(0..schema.cardinality(t))],
        })
        .collect()
}

fn draw_appearance(rng: &mut ChaCha8Rng, schema: &TaskSchema) -> Vec<usize> {
    Task::APPEARANCE.iter().map(|&t| rng.random_range(0..schema.cardinality(t))).collect()
}

struct IdentityBlock {
    annotations: Vec<SampleAnnotation>,
    rows: Vec<Array1<f64>>,
}

/// Generates embeddings, annotations and a split.
///
/// Test identities contribute their first `queries_per_id` samples to the
/// query set (keeping at least one for the gallery) and the rest to the
/// gallery; training identities go entirely to the training set.
pub fn gen_embeddings(spec: &SynthSpec, schema: &TaskSchema) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let counts = spec.counts.counts(spec.num_ids);
    let mut main = stream(spec.seed, 0);
    let centroids = place_centroids(spec, &mut main)?;

    let mut order: Vec<usize> = (0..spec.num_ids).collect();
    order.shuffle(&mut main);
    let num_test = (spec.test_fraction * spec.num_ids as f64).round() as usize;
    let mut is_test = vec![false; spec.num_ids];
    for &i in &order[..num_test] {
        is_test[i] = true;
    }

    let id_width = spec.num_ids.to_string().len().max(4);
    let sample_width = counts.iter().max().copied().unwrap_or(1).to_string().len().max(4);

    let blocks: Vec<IdentityBlock> = (0..spec.num_ids)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64 + 1);
            let appearance = draw_appearance(&mut rng, schema);
            let person = format!("p{i:0id_width$}");
            let mut block = IdentityBlock {
                annotations: Vec::with_capacity(counts[i]),
                rows: Vec::with_capacity(counts[i]),
            };
            for s in 0..counts[i] {
                block.rows.push(noisy_sample(&mut rng, centroids[i].view(), spec.sigma_within));
                block.annotations.push(SampleAnnotation {
                    image_id: format!("{person}_{s:0sample_width$}"),
                    person_id: Some(person.clone()),
                    labels: draw_labels(&mut rng, schema, &appearance),
                });
            }
            block
        })
        .collect();

    let mut annotations = Vec::new();
    let mut rows = Vec::new();
    let mut split = DatasetSplit::default();
    for (i, block) in blocks.into_iter().enumerate() {
        let queries = if counts[i] >= 2 { spec.queries_per_id.min(counts[i] - 1) } else { 0 };
        for (s, (ann, row)) in block.annotations.into_iter().zip(block.rows).enumerate() {
            let subset = match (is_test[i], s < queries) {
                (false, _) => Subset::Train,
                (true, true) => Subset::Query,
                (true, false) => Subset::Gallery,
            };
            split.membership.insert(ann.image_id.clone(), subset);
            annotations.push(ann);
            rows.push(row);
        }
    }

    let mut rng = stream(spec.seed, spec.num_ids as u64 + 1);
    let width = spec.num_unidentified.to_string().len().max(5);
    for u in 0..spec.num_unidentified {
        let appearance = draw_appearance(&mut rng, schema);
        rows.push(unit_vector(&mut rng, spec.dim));
        let ann = SampleAnnotation {
            image_id: format!("u{u:0width$}"),
            person_id: None,
            labels: draw_labels(&mut rng, schema, &appearance),
        };
        split.membership.insert(ann.image_id.clone(), Subset::Gallery);
        annotations.push(ann);
    }

    let mut matrix = Array2::zeros((rows.len(), spec.dim));
    for (mut dst, src) in matrix.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    let ids = annotations.iter().map(|a| a.image_id.clone()).collect();
    Ok(SynthData {
        embeddings: EmbeddingMatrix::new(ids, matrix).expect("one id per row"),
        annotations,
        split,
    })
}

/// Predictions that copy the ground truth, except that each task label is
/// replaced by a uniformly drawn one with probability `noise`.
pub fn gen_predictions(annotations: &[SampleAnnotation], schema: &TaskSchema, noise: f64, seed: u64) -> Vec<Prediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    annotations
        .iter()
        .map(|a| Prediction {
            image_id: a.image_id.clone(),
            labels: Task::ALL
                .iter()
                .map(|&task| {
                    if noise > 0.0 && rng.random_bool(noise.min(1.0)) {
                        if task.is_multi_label() {
                            draw_expression(&mut rng, schema.cardinality(task))
                        } else {
                            vec![rng.random_range(0..schema.cardinality(task))]
                        }
                    } else {
                        a.label_set(task).to_vec()
                    }
                })
                .collect(),
        })
        .collect()
}

/// Rows plus identities for the oracles.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRows<'a> {
    pub image_ids: &'a [String],
    pub person_ids: &'a [Option<String>],
    pub rows: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRetrieval {
    pub macro_map: f64,
    pub macro_rank1: f64,
}

fn naive_cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Reference macro mAP and rank-1: each gallery item's rank is counted
/// directly as one plus the number of items that beat it (higher cosine,
/// or equal cosine at a lower index). Gallery items in the query's group
/// are skipped; queries without an identity or without any relevant item
/// are skipped. Returns `None` when nothing is left to score.
pub fn oracle_retrieval(
    query: LabeledRows<'_>,
    gallery: LabeledRows<'_>,
    groups: Option<&GroupAssignment>,
) -> Option<OracleRetrieval> {
    let mut per_id: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for q in 0..query.rows.nrows() {
        let Some(pid) = query.person_ids[q].as_deref() else {
            continue;
        };
        let qid = &query.image_ids[q];
        let same_group = |g: usize| match groups {
            Some(groups) => match (groups.group_of(qid), groups.group_of(&gallery.image_ids[g])) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
            None => false,
        };
        let kept: Vec<usize> = (0..gallery.rows.nrows()).filter(|&g| !same_group(g)).collect();
        let sims: Vec<f64> = kept
            .iter()
            .map(|&g| naive_cosine(query.rows.row(q), gallery.rows.row(g)))
            .collect();
        let rank_of = |a: usize| -> usize {
            1 + (0..kept.len())
                .filter(|&b| sims[b] > sims[a] || (sims[b] == sims[a] && kept[b] < kept[a]))
                .count()
        };
        let relevant: Vec<usize> = (0..kept.len())
            .filter(|&a| gallery.person_ids[kept[a]].as_deref() == Some(pid))
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let ranks: Vec<usize> = relevant.iter().map(|&a| rank_of(a)).collect();
        let mut ap = 0.0;
        for &r in &ranks {
            let hits_up_to_r = ranks.iter().filter(|&&o| o <= r).count();
            ap += hits_up_to_r as f64 / r as f64;
        }
        ap /= ranks.len() as f64;
        let rank1 = if ranks.contains(&1) { 1.0 } else { 0.0 };
        per_id.entry(pid).or_default().push((ap, rank1));
    }
    if per_id.is_empty() {
        return None;
    }
    let n = per_id.len() as f64;
    let mut macro_map = 0.0;
    let mut macro_rank1 = 0.0;
    for scores in per_id.values() {
        let m = scores.len() as f64;
        macro_map += scores.iter().map(|s| s.0).sum::<f64>() / m;
        macro_rank1 += scores.iter().map(|s| s.1).sum::<f64>() / m;
    }
    Some(OracleRetrieval {
        macro_map: macro_map / n,
        macro_rank1: macro_rank1 / n,
    })
}

pub fn oracle_map(query: LabeledRows<'_>, gallery: LabeledRows<'_>, groups: Option<&GroupAssignment>) -> Option<f64> {
    oracle_retrieval(query, gallery, groups).map(|r| r.macro_map)
}

/// Exhaustive LTS: the smallest number of classes whose counts cover a
/// `k` fraction of all samples, over all `2^N` class subsets, divided by
/// `k·N`.
pub fn oracle_lts(hist: &LabelHistogram, k: f64) -> Result<f64, SynthError> {
    let n = hist.num_classes();
    if n > MAX_ORACLE_CLASSES {
        return Err(SynthError::TooLarge(n));
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(MetricsError::RangeError { name: "k", value: k }.into());
    }
    let total = hist.total();
    if total == 0 {
        return Err(MetricsError::EmptyHistogram.into());
    }
    let counts = hist.counts();
    let mut best = n;
    for mask in 0u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let covered: u64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| counts[i]).sum();
        if covered as f64 / total as f64 >= k {
            best = size;
        }
    }
    Ok(best as f64 / (k * n as f64))
}

/// Exponent of a [`CountProfile::LongTail`] over `num_ids` identities whose
/// LTS at `k` is closest to `target`, searched on a grid of step 0.01 in
/// `[0, 8]`. Fails when the best profile misses by more than 0.05.
pub fn fit_long_tail(num_ids: usize, head: usize, k: f64, target: f64) -> Result<(f64, f64), SynthError> {
    let mut best = (0.0, f64::INFINITY);
    for step in 0..=800 {
        let exponent = step as f64 * 0.01;
        let value = lts(&LabelHistogram::new(long_tail_counts(num_ids, head, exponent).iter().map(|&c| c as u64).collect()), k)?;
        if (value - target).abs() < (best.1 - target).abs() {
            best = (exponent, value);
        }
    }
    if (best.1 - target).abs() > 0.05 {
        return Err(SynthError::UnreachableLts { target, best: best.1 });
    }
    Ok(best)
}
