//! Ranking and identity-balanced retrieval metrics (Macro CMC / Macro mAP).
//!
//! Plain CMC and mAP average over queries, which lets identities with many
//! query images dominate. The macro variants first average within each
//! identity and then average the identities with equal weight.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{ArrayView1, ArrayView2};

use super::{order_free_mean, MetricsError};
use crate::dedup::GroupAssignment;

/// Average precision of one ranked list.
///
/// `num_relevant_total` counts every relevant item of the query, including
/// any that do not appear in `relevance`.
pub fn average_precision(relevance: &[bool], num_relevant_total: usize) -> Result<f64, MetricsError> {
    if num_relevant_total == 0 {
        return Err(MetricsError::DegenerateQuery);
    }
    let found = relevance.iter().filter(|r| **r).count();
    if found > num_relevant_total {
        return Err(MetricsError::RelevantCountTooSmall {
            found,
            total: num_relevant_total,
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, _) in relevance.iter().enumerate().filter(|(_, r)| **r) {
        hits += 1;
        sum += hits as f64 / (rank + 1) as f64;
    }
    Ok(sum / num_relevant_total as f64)
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub similarity: f64,
}

/// Gallery ranking for one query, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranking: Vec<Ranked>,
}

/// Ranks every non-excluded gallery row by cosine similarity to `query`.
/// Ties go to the lower gallery index.
pub fn rank_gallery(
    query_id: &str,
    query: ArrayView1<f64>,
    gallery: ArrayView2<f64>,
    excluded: &BTreeSet<usize>,
) -> Result<RetrievalResult, MetricsError> {
    if query.len() != gallery.ncols() {
        return Err(MetricsError::DimensionMismatch {
            expected: gallery.ncols(),
            found: query.len(),
        });
    }
    if let Some(&index) = excluded.iter().find(|&&i| i >= gallery.nrows()) {
        return Err(MetricsError::ExcludedIndexOutOfRange {
            index,
            len: gallery.nrows(),
        });
    }
    let mut ranking: Vec<Ranked> = gallery
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .map(|(index, row)| Ranked {
            index,
            similarity: cosine_similarity(query, row),
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.index.cmp(&b.index))
    });
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranking,
    })
}

/// Gallery positions that share the query's near-duplicate group.
pub fn exclusion_set(
    query_id: &str,
    groups: &GroupAssignment,
    gallery_ids: &[String],
) -> BTreeSet<usize> {
    let Some(group) = groups.group_of(query_id) else {
        return BTreeSet::new();
    };
    gallery_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| groups.group_of(id) == Some(group))
        .map(|(i, _)| i)
        .collect()
}

/// All rankings of the query images of one identity.
#[derive(Debug, Clone)]
pub struct IdQueries {
    pub person_id: String,
    pub results: Vec<RetrievalResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdRetrieval {
    pub person_id: String,
    pub queries_used: usize,
    pub queries_dropped: usize,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSummary {
    pub macro_map: f64,
    pub macro_rank1: f64,
    pub macro_rank5: f64,
    /// Identities that kept at least one query, sorted by person id.
    pub per_id: Vec<IdRetrieval>,
}

struct QueryScore {
    ap: f64,
    rank1: f64,
    rank5: f64,
}

fn score_query(
    result: &RetrievalResult,
    person_id: &str,
    gallery_labels: &[Option<String>],
) -> Result<Option<QueryScore>, MetricsError> {
    let mut relevance = Vec::with_capacity(result.ranking.len());
    for r in &result.ranking {
        let label = gallery_labels
            .get(r.index)
            .ok_or(MetricsError::GalleryIndexOutOfRange {
                index: r.index,
                len: gallery_labels.len(),
            })?;
        relevance.push(label.as_deref() == Some(person_id));
    }
    let relevant = relevance.iter().filter(|r| **r).count();
    if relevant == 0 {
        return Ok(None);
    }
    let hit_within = |k: usize| -> f64 {
        if relevance.iter().take(k).any(|r| *r) {
            1.0
        } else {
            0.0
        }
    };
    Ok(Some(QueryScore {
        ap: average_precision(&relevance, relevant)?,
        rank1: hit_within(1),
        rank5: hit_within(5),
    }))
}

/// Macro mAP and Macro CMC at ranks 1 and 5.
///
/// Queries whose ranking holds no relevant item (for instance because group
/// exclusion removed all of them) are dropped, as are identities left with
/// no query. Entries sharing a person id are merged. Reduction runs in
/// person-id order over sorted values, so the result is independent of the
/// order of `queries` and of the queries within an identity.
pub fn macro_retrieval(
    queries: &[IdQueries],
    gallery_labels: &[Option<String>],
) -> Result<RetrievalSummary, MetricsError> {
    let gallery_ids: BTreeSet<&str> = gallery_labels.iter().flatten().map(String::as_str).collect();

    let mut by_id: BTreeMap<&str, (Vec<QueryScore>, usize)> = BTreeMap::new();
    for entry in queries {
        if !gallery_ids.contains(entry.person_id.as_str()) {
            return Err(MetricsError::QueryIdNotInGallery(entry.person_id.clone()));
        }
        let slot = by_id.entry(entry.person_id.as_str()).or_default();
        for result in &entry.results {
            match score_query(result, &entry.person_id, gallery_labels)? {
                Some(score) => slot.0.push(score),
                None => slot.1 += 1,
            }
        }
    }

    let per_id: Vec<IdRetrieval> = by_id
        .into_iter()
        .filter(|(_, (scores, _))| !scores.is_empty())
        .map(|(pid, (scores, dropped))| IdRetrieval {
            person_id: pid.to_string(),
            queries_used: scores.len(),
            queries_dropped: dropped,
            map: order_free_mean(scores.iter().map(|s| s.ap).collect()),
            rank1: order_free_mean(scores.iter().map(|s| s.rank1).collect()),
            rank5: order_free_mean(scores.iter().map(|s| s.rank5).collect()),
        })
        .collect();

    if per_id.is_empty() {
        return Err(MetricsError::EmptyQuerySet);
    }
    Ok(RetrievalSummary {
        macro_map: order_free_mean(per_id.iter().map(|s| s.map).collect()),
        macro_rank1: order_free_mean(per_id.iter().map(|s| s.rank1).collect()),
        macro_rank5: order_free_mean(per_id.iter().map(|s| s.rank5).collect()),
        per_id,
    })
}
