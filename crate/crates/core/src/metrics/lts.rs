//! Long Tail Score LTS_k.
//!
//! LTS_k is the smallest number of classes whose samples make up at least a
//! `k` fraction of the data, divided by `k * N`. Values near 0 mean a few
//! head classes hold most samples; values near 1 mean a flat distribution.

use super::MetricsError;

/// Number of samples per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHistogram(pub Vec<u64>);

impl LabelHistogram {
    pub fn new(counts: Vec<u64>) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Computes LTS_k. Taking classes largest-first reaches the coverage target
/// with the fewest classes, so the greedy count is the exact minimum.
///
/// Coverage is tested as `covered / total >= k`, which makes the score
/// exactly invariant under scaling every count by the same factor.
pub fn lts(hist: &LabelHistogram, k: f64) -> Result<f64, MetricsError> {
    if !(k > 0.0 && k < 1.0) {
        return Err(MetricsError::RangeError { name: "k", value: k });
    }
    let total = hist.total();
    if total == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let mut sorted = hist.0.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut covered = 0u64;
    let mut classes = 0usize;
    for count in sorted {
        covered += count;
        classes += 1;
        if covered as f64 / total as f64 >= k {
            break;
        }
    }
    Ok(classes as f64 / (k * hist.num_classes() as f64))
}
