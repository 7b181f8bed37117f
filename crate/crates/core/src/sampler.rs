//! Seeded batch construction: uniform random epochs, P×K identity
//! batches, and P×K batches topped up with unidentified samples.
//!
//! Every function here is a pure function of its inputs and the seed in
//! [`SamplerConfig`]. [`BatchSampler`] keeps one generator alive across
//! epochs so that consecutive epochs differ while the whole stream stays
//! reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::SampleAnnotation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("need {p} identities with labeled samples, found {found}")]
    NotEnoughIdentities { p: usize, found: usize },
    #[error("shuffle-mix needs at least one sample without a person id")]
    NoUnidentifiedSamples,
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Pk,
    ShuffleMix,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(Strategy::Random),
            "pk" => Ok(Strategy::Pk),
            "shuffle_mix" | "shufflemix" => Ok(Strategy::ShuffleMix),
            _ => Err(format!("unknown strategy `{s}`")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Pk => "pk",
            Strategy::ShuffleMix => "shuffle_mix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.batch_size == 0 {
            return Err(SamplerError::InvalidConfig("batch size must be positive".into()));
        }
        if self.strategy != Strategy::Random {
            if self.p < 2 || self.k < 2 {
                return Err(SamplerError::InvalidConfig(format!(
                    "P and K must both be at least 2 (got P={}, K={})",
                    self.p, self.k
                )));
            }
            if self.p * self.k > self.batch_size {
                return Err(SamplerError::InvalidConfig(format!(
                    "P·K = {} exceeds batch size {}",
                    self.p * self.k,
                    self.batch_size
                )));
            }
        }
        Ok(())
    }
}

/// Sample indices of one batch, in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchSpec {
    pub indices: Vec<usize>,
}

impl BatchSpec {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Samples grouped by identity, plus the samples with no identity.
#[derive(Debug, Clone)]
struct IdentityIndex {
    by_id: Vec<Vec<usize>>,
    unidentified: Vec<usize>,
}

impl IdentityIndex {
    fn new(annotations: &[SampleAnnotation]) -> Self {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut unidentified = Vec::new();
        for (i, a) in annotations.iter().enumerate() {
            match &a.person_id {
                Some(pid) => groups.entry(pid.as_str()).or_default().push(i),
                None => unidentified.push(i),
            }
        }
        Self {
            by_id: groups.into_values().collect(),
            unidentified,
        }
    }
}

fn check_identities(index: &IdentityIndex, cfg: &SamplerConfig) -> Result<(), SamplerError> {
    if index.by_id.len() < cfg.p {
        return Err(SamplerError::NotEnoughIdentities {
            p: cfg.p,
            found: index.by_id.len(),
        });
    }
    Ok(())
}

fn random_epoch_with(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<BatchSpec> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| BatchSpec { indices: c.to_vec() })
        .collect()
}

/// K draws from one identity: without replacement when it has at least K
/// samples, otherwise every sample once and the rest drawn with
/// replacement.
fn draw_k(samples: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool = samples.to_vec();
    pool.shuffle(rng);
    if pool.len() >= k {
        pool.truncate(k);
    } else {
        while pool.len() < k {
            pool.push(samples[rng.random_range(0..samples.len())]);
        }
    }
    pool
}

/// One epoch of P×K blocks: identities are shuffled and consumed P at a
/// time, giving `floor(#ids / P)` blocks.
fn pk_epoch_with(index: &IdentityIndex, p: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut ids: Vec<usize> = (0..index.by_id.len()).collect();
    ids.shuffle(rng);
    ids.chunks_exact(p)
        .map(|chosen| {
            chosen
                .iter()
                .flat_map(|&id| draw_k(&index.by_id[id], k, rng))
                .collect()
        })
        .collect()
}

fn shuffle_mix_epoch_with(index: &IdentityIndex, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Vec<BatchSpec> {
    let blocks = pk_epoch_with(index, cfg.p, cfg.k, rng);
    let mut pool = index.unidentified.clone();
    pool.shuffle(rng);
    let quota = cfg.batch_size - cfg.p * cfg.k;
    let mut pool = pool.into_iter();
    blocks
        .into_iter()
        .map(|mut indices| {
            indices.extend(pool.by_ref().take(quota));
            indices.shuffle(rng);
            BatchSpec { indices }
        })
        .collect()
}

/// A seeded permutation of `0..n` cut into batches of `cfg.batch_size`;
/// the last batch may be short.
pub fn random_epoch(n: usize, cfg: &SamplerConfig) -> Result<Vec<BatchSpec>, SamplerError> {
    if cfg.batch_size == 0 {
        return Err(SamplerError::InvalidConfig("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(random_epoch_with(n, cfg.batch_size, &mut rng))
}

/// One epoch of batches holding exactly `P` identities × `K` samples.
/// Samples without a person id never appear.
pub fn pk_batches(annotations: &[SampleAnnotation], cfg: &SamplerConfig) -> Result<Vec<BatchSpec>, SamplerError> {
    cfg.validate()?;
    let index = IdentityIndex::new(annotations);
    check_identities(&index, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(pk_epoch_with(&index, cfg.p, cfg.k, &mut rng)
        .into_iter()
        .map(|indices| BatchSpec { indices })
        .collect())
}

/// One epoch of P×K blocks, each followed by up to `B − P·K` unidentified
/// samples drawn without replacement, the whole batch then shuffled. Once
/// the unidentified pool runs dry the remaining batches are plain P×K.
pub fn shuffle_mix_batches(
    annotations: &[SampleAnnotation],
    cfg: &SamplerConfig,
) -> Result<Vec<BatchSpec>, SamplerError> {
    cfg.validate()?;
    let index = IdentityIndex::new(annotations);
    check_identities(&index, cfg)?;
    if index.unidentified.is_empty() {
        return Err(SamplerError::NoUnidentifiedSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(shuffle_mix_epoch_with(&index, cfg, &mut rng))
}

/// Multi-epoch sampler with one generator for the whole stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    cfg: SamplerConfig,
    index: IdentityIndex,
    n: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(annotations: &[SampleAnnotation], cfg: SamplerConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let index = IdentityIndex::new(annotations);
        match cfg.strategy {
            Strategy::Random => {}
            Strategy::Pk => check_identities(&index, &cfg)?,
            Strategy::ShuffleMix => {
                check_identities(&index, &cfg)?;
                if index.unidentified.is_empty() {
                    return Err(SamplerError::NoUnidentifiedSamples);
                }
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            index,
            n: annotations.len(),
            rng,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn next_epoch(&mut self) -> Vec<BatchSpec> {
        match self.cfg.strategy {
            Strategy::Random => random_epoch_with(self.n, self.cfg.batch_size, &mut self.rng),
            Strategy::Pk => pk_epoch_with(&self.index, self.cfg.p, self.cfg.k, &mut self.rng)
                .into_iter()
                .map(|indices| BatchSpec { indices })
                .collect(),
            Strategy::ShuffleMix => shuffle_mix_epoch_with(&self.index, &self.cfg, &mut self.rng),
        }
    }
}
