//! Central finite-difference check of analytic gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    bce_multilabel, br_loss, softmax_ce, total_loss_uncertainty, triplet_loss_batch_hard,
    FeatureBatch, LossError, LossResult, UncertaintyParams, DEFAULT_TRIPLET_MARGIN,
};

/// Largest acceptable relative gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Maximum relative error between the analytic `grad_features` of `kernel`
/// and central differences `(L(x+ε) − L(x−ε)) / 2ε` over every feature
/// coordinate. The relative error uses `max(|analytic|, |numeric|, 1e-8)`
/// as denominator.
pub fn finite_diff_check<F>(kernel: F, batch: &FeatureBatch, eps: f64) -> Result<f64, LossError>
where
    F: Fn(&FeatureBatch) -> Result<LossResult, LossError>,
{
    assert!(eps > 0.0, "step must be positive");
    let analytic = kernel(batch)?.grad_features;
    let mut probe = batch.clone();
    let mut worst = 0.0f64;
    for ((i, j), &a) in analytic.indexed_iter() {
        let x = batch.features[[i, j]];
        probe.features[[i, j]] = x + eps;
        let plus = kernel(&probe)?.value;
        probe.features[[i, j]] = x - eps;
        let minus = kernel(&probe)?.value;
        probe.features[[i, j]] = x;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Br,
    Triplet,
    Ce,
    Bce,
    Uncertainty,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "br" => Ok(LossKind::Br),
            "triplet" => Ok(LossKind::Triplet),
            "ce" => Ok(LossKind::Ce),
            "bce" => Ok(LossKind::Bce),
            "uncertainty" => Ok(LossKind::Uncertainty),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Br => "br",
            LossKind::Triplet => "triplet",
            LossKind::Ce => "ce",
            LossKind::Bce => "bce",
            LossKind::Uncertainty => "uncertainty",
        })
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Seeded random instance for `kind`, then [`finite_diff_check`].
///
/// * `br`, `triplet`: an `n`×`d` batch with about two samples per label
///   (the last row unlabeled when `n ≥ 4`).
/// * `ce`, `bce`: `n` logit vectors of length `d`, worst error over them.
/// * `uncertainty`: `n` task losses; both the loss and the `s` gradients
///   are checked.
pub fn run_loss_check(kind: LossKind, n: usize, d: usize, seed: u64, eps: f64) -> Result<f64, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LossKind::Br | LossKind::Triplet => {
            let classes = (n as u64 / 2).max(2);
            let mut labels: Vec<Option<u64>> = (0..n as u64).map(|i| Some(i % classes)).collect();
            if n >= 4 {
                labels[n - 1] = None;
            }
            let batch = FeatureBatch::new(normal_matrix(&mut rng, n, d), labels)?;
            if kind == LossKind::Br {
                finite_diff_check(br_loss, &batch, eps)
            } else {
                finite_diff_check(|b| triplet_loss_batch_hard(b, DEFAULT_TRIPLET_MARGIN), &batch, eps)
            }
        }
        LossKind::Ce | LossKind::Bce => {
            let mut worst = 0.0f64;
            for _ in 0..n {
                let logits = FeatureBatch::from_vector(normal_matrix(&mut rng, 1, d).as_slice().unwrap());
                let err = if kind == LossKind::Ce {
                    let target = rng.random_range(0..d);
                    finite_diff_check(|b| softmax_ce(b.features.as_slice().unwrap(), target), &logits, eps)?
                } else {
                    let targets: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.3)).collect();
                    finite_diff_check(|b| bce_multilabel(b.features.as_slice().unwrap(), &targets), &logits, eps)?
                };
                worst = worst.max(err);
            }
            Ok(worst)
        }
        LossKind::Uncertainty => {
            let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let params = UncertaintyParams::new(s.clone());
            let wrt_losses = finite_diff_check(
                |b| total_loss_uncertainty(b.features.as_slice().unwrap(), &params),
                &FeatureBatch::from_vector(&losses),
                eps,
            )?;
            let wrt_s = finite_diff_check(
                |b| {
                    let params = UncertaintyParams::new(b.features.as_slice().unwrap().to_vec());
                    let r = total_loss_uncertainty(&losses, &params)?;
                    let grad_s = r.grad_aux.expect("uncertainty loss has an s gradient");
                    Ok(LossResult::vector(r.value, grad_s.to_vec()))
                },
                &FeatureBatch::from_vector(&s),
                eps,
            )?;
            Ok(wrt_losses.max(wrt_s))
        }
    }
}
