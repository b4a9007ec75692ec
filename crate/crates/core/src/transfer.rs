//! Layer-freezing transfer to a new environment.
//!
//! The first `k` layers of a trained base model are frozen; the remaining
//! layers are re-initialized (or warm-started from the base weights) and
//! trained on the target environment's data.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locnet::spec::LAYER_COUNT;
use crate::locnet::{
    evaluate, evaluate_features, train, train_on_features, Checkpoint, EvalReport, LocnetError, Model, ModelSpec,
    TensorSet, TrainConfig, TrainReport,
};
use crate::rows;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("freezing {k} layers leaves nothing to train (the network has {LAYER_COUNT})")]
    NothingToTrain { k: usize },
    #[error(transparent)]
    Locnet(#[from] LocnetError),
    #[error("sweep log: {0}")]
    Csv(#[from] csv::Error),
}

/// Train, validation and test tensors of the target environment.
#[derive(Debug, Clone, Copy)]
pub struct TargetData<'a> {
    pub train: &'a TensorSet<f32>,
    pub val: &'a TensorSet<f32>,
    pub test: &'a TensorSet<f32>,
}

/// One line of the transfer sweep log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub k: usize,
    pub mean_error_m: f64,
    pub train_seconds: f64,
    pub epochs: usize,
    pub trainable_params: usize,
    pub total_params: usize,
}

#[derive(Debug, Clone)]
pub struct TransferRun {
    pub row: TransferRow,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub eval: EvalReport,
}

/// Copy of the base model with layers `1..=k` frozen and the rest trainable.
pub fn freeze_prefix(base: &Checkpoint, k: usize) -> Result<Model<f32>, TransferError> {
    if k >= LAYER_COUNT {
        return Err(TransferError::NothingToTrain { k });
    }
    let mut model = base.model.clone();
    for l in 0..LAYER_COUNT {
        model.set_frozen(l, l < k);
    }
    Ok(model)
}

/// Trains `model` (whose leading frozen layers are fixed) and evaluates it on
/// the test split. The frozen prefix is applied once per sample when its
/// outputs fit within the configured cache budget.
pub(crate) fn fit_and_score(
    model: &Model<f32>,
    data: TargetData<'_>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport, EvalReport, f64), LocnetError> {
    let started = Instant::now();
    let k = model.spec().frozen_prefix();
    let n = data.train.len() + data.val.len() + data.test.len();
    let cache_bytes = n * model.shape_before(k).len() * 4;
    let (ck, report, eval) = if k > 0 && cache_bytes <= cfg.feature_cache_limit_mb << 20 {
        let train_in = model.features(data.train, k);
        let val_in = model.features(data.val, k);
        let (ck, report) = train_on_features(model, k, &train_in, &val_in, cfg)?;
        let eval = evaluate_features(&ck.model, k, &model.features(data.test, k))?;
        (ck, report, eval)
    } else {
        let (ck, report) = train(model, data.train, data.val, cfg)?;
        let eval = evaluate(&ck.model, data.test)?;
        (ck, report, eval)
    };
    Ok((ck, report, eval, started.elapsed().as_secs_f64()))
}

/// Freezes the first `k` layers of `base` and retrains the rest on `data`.
///
/// Without `warm_start` the trainable layers are re-initialized from
/// `cfg.seed`, drawing exactly the weights a fresh model built with that seed
/// would have in those layers.
pub fn retrain(
    base: &Checkpoint,
    k: usize,
    data: TargetData<'_>,
    cfg: &TrainConfig,
    warm_start: bool,
) -> Result<TransferRun, TransferError> {
    let mut model = freeze_prefix(base, k)?;
    if !warm_start {
        model.reinit_layers(k..LAYER_COUNT, cfg.seed);
    }
    let (checkpoint, report, eval, secs) = fit_and_score(&model, data, cfg)?;
    let audit = checkpoint.model.param_audit();
    Ok(TransferRun {
        row: TransferRow {
            k,
            mean_error_m: eval.mean_error_m,
            train_seconds: secs,
            epochs: report.epochs_run,
            trainable_params: audit.total() - audit.prefix(k),
            total_params: audit.total(),
        },
        checkpoint,
        report,
        eval,
    })
}

/// Trains a fresh model of the given architecture on `data` alone.
pub fn from_scratch(spec: &ModelSpec, data: TargetData<'_>, cfg: &TrainConfig) -> Result<TransferRun, TransferError> {
    let mut spec = spec.clone();
    for l in &mut spec.layers {
        l.frozen = false;
    }
    let model = Model::build(spec, cfg.seed)?;
    let (checkpoint, report, eval, secs) = fit_and_score(&model, data, cfg)?;
    let total = checkpoint.model.param_audit().total();
    Ok(TransferRun {
        row: TransferRow {
            k: 0,
            mean_error_m: eval.mean_error_m,
            train_seconds: secs,
            epochs: report.epochs_run,
            trainable_params: total,
            total_params: total,
        },
        checkpoint,
        report,
        eval,
    })
}

/// Runs [`retrain`] for every `k` in `ks`, calling `on_row` after each.
pub fn transfer_sweep(
    base: &Checkpoint,
    data: TargetData<'_>,
    cfg: &TrainConfig,
    ks: impl IntoIterator<Item = usize>,
    warm_start: bool,
    mut on_row: impl FnMut(&TransferRun),
) -> Result<Vec<TransferRow>, TransferError> {
    let ks: Vec<usize> = ks.into_iter().collect();
    if let Some(&k) = ks.iter().find(|&&k| k >= LAYER_COUNT) {
        return Err(TransferError::NothingToTrain { k });
    }
    let mut out = Vec::with_capacity(ks.len());
    for k in ks {
        let run = retrain(base, k, data, cfg, warm_start)?;
        on_row(&run);
        out.push(run.row);
    }
    Ok(out)
}

/// Resumable [`transfer_sweep`] logging to the CSV at `path`.
///
/// Values of `k` already present in the log are skipped; each new row is
/// passed to `on_row` and then appended as soon as it finishes. Returns every
/// logged row ordered by `k`.
pub fn transfer_sweep_csv(
    base: &Checkpoint,
    data: TargetData<'_>,
    cfg: &TrainConfig,
    ks: impl IntoIterator<Item = usize>,
    warm_start: bool,
    path: &Path,
    mut on_row: impl FnMut(&TransferRun),
) -> Result<Vec<TransferRow>, TransferError> {
    let done: BTreeSet<usize> = rows::read_rows::<TransferRow>(path)?.iter().map(|r| r.k).collect();
    let todo: Vec<usize> = ks.into_iter().filter(|k| !done.contains(k)).collect();
    let mut log_err = None;
    transfer_sweep(base, data, cfg, todo, warm_start, |run| {
        on_row(run);
        if log_err.is_none() {
            log_err = rows::append_row(path, &run.row).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut all: Vec<TransferRow> = rows::read_rows(path)?;
    all.sort_by_key(|r| r.k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locnet::CheckpointMeta;

    fn base() -> Checkpoint {
        Checkpoint::new(Model::build(ModelSpec::micro(), 9).unwrap(), CheckpointMeta::default())
    }

    #[test]
    fn freeze_prefix_sets_flags() {
        let m = freeze_prefix(&base(), 19).unwrap();
        assert_eq!(m.spec().frozen_prefix(), 19);
        assert!(m.spec().layers[19..].iter().all(|l| !l.frozen));
        assert!(matches!(
            freeze_prefix(&base(), 28),
            Err(TransferError::NothingToTrain { k: 28 })
        ));
        assert!(freeze_prefix(&base(), 27).is_ok());
    }

    #[test]
    fn reinit_matches_fresh_model_tail() {
        let cfg = TrainConfig {
            seed: 4,
            ..TrainConfig::default()
        };
        let mut m = freeze_prefix(&base(), 10).unwrap();
        m.reinit_layers(10..LAYER_COUNT, cfg.seed);
        let fresh: Model<f32> = Model::build(ModelSpec::micro(), cfg.seed).unwrap();
        assert_eq!(&m.params()[10..], &fresh.params()[10..]);
        assert_eq!(&m.params()[..10], &base().model.params()[..10]);
    }
}
