//! Evaluation and training-support primitives for multi-task portrait
//! interpretation: person re-identification together with appearance,
//! posture and expression attributes.
//!
//! * [`schema`] describes the seven classification tasks and validates
//!   annotations and splits.
//! * [`metrics`] holds macro retrieval scores, macro F1, the aggregated
//!   quality score and the long-tail score.
//! * [`dedup`] builds perceptual-hash near-duplicate groups used to exclude
//!   trivially easy gallery matches.
//! * [`losses`] provides loss kernels with analytic gradients.
//! * [`allocator`] splits a feature vector into per-task ranges.
//! * [`sampler`] builds random, P×K and mixed batches.
//! * [`synth`] generates synthetic data and brute-force reference metrics.
//! * [`evaluate`], [`io`] and [`embedding`] wire everything to files.

pub mod allocator;
pub mod dedup;
pub mod embedding;
pub mod evaluate;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod sampler;
pub mod schema;
pub mod synth;
