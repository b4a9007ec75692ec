//! Training-data ablation for dense-only retraining.
//!
//! With the convolutional stack (layers 1..=19) frozen, the dense head is
//! retrained on a random subset of the target training set for each drop
//! fraction `p`, keeping `round((1 - p) * n)` samples.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locnet::spec::{FLATTEN_LAYER, LAYER_COUNT};
use crate::locnet::{evaluate_features, train_on_features, Checkpoint, EvalReport, LocnetError, TrainConfig};
use crate::rows;
use crate::transfer::{freeze_prefix, TargetData, TransferError};

/// Layers frozen during ablation: everything up to and including the flatten.
pub const ABLATION_FROZEN_LAYERS: usize = FLATTEN_LAYER;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("drop fraction {0} must lie in [0, 1)")]
    InvalidFraction(f64),
    #[error("drop fraction {fraction} keeps {retained} samples, fewer than one batch of {batch_size}")]
    InsufficientData {
        fraction: f64,
        retained: usize,
        batch_size: usize,
    },
    #[error(transparent)]
    Locnet(#[from] LocnetError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("sweep log: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub drop_fraction: f64,
    pub retained_samples: usize,
    pub mean_error_m: f64,
    pub epochs: usize,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub row: AblationRow,
    pub eval: EvalReport,
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_drop_fractions() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Number of samples kept out of `n` when dropping fraction `p`.
pub fn retained_count(n: usize, p: f64) -> Result<usize, AblationError> {
    if !(0.0..1.0).contains(&p) {
        return Err(AblationError::InvalidFraction(p));
    }
    Ok(((1.0 - p) * n as f64).round() as usize)
}

/// Sorted indices of the samples kept when dropping fraction `p` of `n`.
///
/// Each fraction draws its own subset from a stream keyed by `(seed, p)`, so
/// rows are independent of one another and of the order they run in.
pub fn retained_indices(n: usize, p: f64, seed: u64) -> Result<Vec<usize>, AblationError> {
    let keep = retained_count(n, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p.to_bits());
    let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Retrains the dense head of `base` once per drop fraction.
///
/// The frozen layers are evaluated once for the whole target set; each row
/// then re-initializes the head from `cfg.seed` and trains on its subset.
pub fn ablation_sweep(
    base: &Checkpoint,
    data: TargetData<'_>,
    cfg: &TrainConfig,
    fractions: &[f64],
    seed: u64,
    mut on_row: impl FnMut(&AblationRun),
) -> Result<Vec<AblationRow>, AblationError> {
    cfg.validate()?;
    for &p in fractions {
        let retained = retained_count(data.train.len(), p)?;
        if retained < cfg.batch_size {
            return Err(AblationError::InsufficientData {
                fraction: p,
                retained,
                batch_size: cfg.batch_size,
            });
        }
    }
    if fractions.is_empty() {
        return Ok(Vec::new());
    }

    let k = ABLATION_FROZEN_LAYERS;
    let mut model = freeze_prefix(base, k)?;
    model.reinit_layers(k..LAYER_COUNT, cfg.seed);
    let train_in = model.features(data.train, k);
    let val_in = model.features(data.val, k);
    let test_in = model.features(data.test, k);

    let mut out = Vec::with_capacity(fractions.len());
    for &p in fractions {
        let started = Instant::now();
        let subset = train_in.subset(&retained_indices(train_in.len(), p, seed)?);
        let (ck, report) = train_on_features(&model, k, &subset, &val_in, cfg)?;
        let eval = evaluate_features(&ck.model, k, &test_in)?;
        let row = AblationRow {
            drop_fraction: p,
            retained_samples: subset.len(),
            mean_error_m: eval.mean_error_m,
            epochs: report.epochs_run,
            train_seconds: started.elapsed().as_secs_f64(),
        };
        let run = AblationRun { row, eval };
        on_row(&run);
        out.push(run.row);
    }
    Ok(out)
}

/// Resumable [`ablation_sweep`] logging to the CSV at `path`; fractions
/// already logged are skipped. Each new row goes to `on_row` before it is
/// appended. Returns every logged row ordered by fraction.
pub fn ablation_sweep_csv(
    base: &Checkpoint,
    data: TargetData<'_>,
    cfg: &TrainConfig,
    fractions: &[f64],
    seed: u64,
    path: &Path,
    mut on_row: impl FnMut(&AblationRun),
) -> Result<Vec<AblationRow>, AblationError> {
    let done: Vec<f64> = rows::read_rows::<AblationRow>(path)?
        .iter()
        .map(|r| r.drop_fraction)
        .collect();
    let todo: Vec<f64> = fractions.iter().copied().filter(|p| !done.contains(p)).collect();
    let mut log_err = None;
    ablation_sweep(base, data, cfg, &todo, seed, |run| {
        on_row(run);
        if log_err.is_none() {
            log_err = rows::append_row(path, &run.row).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut all: Vec<AblationRow> = rows::read_rows(path)?;
    all.sort_by(|a, b| a.drop_fraction.total_cmp(&b.drop_fraction));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let f = default_drop_fractions();
        assert_eq!(f.len(), 19);
        assert_eq!(f[0], 0.05);
        assert_eq!(f[8], 0.45);
        assert_eq!(f[18], 0.95);
    }

    #[test]
    fn retained_counts() {
        assert_eq!(retained_count(600, 0.05).unwrap(), 570);
        assert_eq!(retained_count(600, 0.95).unwrap(), 30);
        assert_eq!(retained_count(7, 0.5).unwrap(), 4);
        assert_eq!(retained_count(10, 0.0).unwrap(), 10);
        assert!(matches!(
            retained_count(10, 1.0),
            Err(AblationError::InvalidFraction(_))
        ));
        assert!(matches!(
            retained_count(10, -0.1),
            Err(AblationError::InvalidFraction(_))
        ));
        assert!(retained_count(10, f64::NAN).is_err());
    }

    #[test]
    fn subsets_are_reproducible_and_independent() {
        let a = retained_indices(200, 0.3, 7).unwrap();
        assert_eq!(a, retained_indices(200, 0.3, 7).unwrap());
        assert_eq!(a.len(), 140);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, retained_indices(200, 0.3, 8).unwrap());
        assert_eq!(retained_indices(50, 0.0, 1).unwrap(), (0..50).collect::<Vec<_>>());
    }
}
