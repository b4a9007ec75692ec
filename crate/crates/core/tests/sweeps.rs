mod common;

use common::{base_checkpoint, random_set};
use csiloc::ablation::{ablation_sweep, ablation_sweep_csv, retained_indices, AblationError};
use csiloc::locnet::spec::LAYER_COUNT;
use csiloc::locnet::{ModelSpec, TrainConfig};
use csiloc::transfer::{retrain, transfer_sweep, transfer_sweep_csv, TargetData, TransferError};

fn cfg() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        batch_size: 5,
        seed: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_prefix_is_bit_identical_and_trainable_count_shrinks() {
    let spec = ModelSpec::micro();
    let base = base_checkpoint(1);
    let (tr, va, te) = (
        random_set(&spec, 15, 1),
        random_set(&spec, 5, 2),
        random_set(&spec, 5, 3),
    );
    let data = TargetData {
        train: &tr,
        val: &va,
        test: &te,
    };
    let ks = [1, 5, 15, 19, 20, 27];
    let mut runs = Vec::new();
    transfer_sweep(&base, data, &cfg(), ks, false, |run| runs.push(run.clone())).unwrap();
    assert_eq!(runs.len(), ks.len());
    for run in &runs {
        let k = run.row.k;
        assert_eq!(
            &run.checkpoint.model.params()[..k],
            &base.model.params()[..k],
            "k = {k}"
        );
        assert_eq!(run.checkpoint.model.spec().frozen_prefix(), k);
        assert_eq!(run.row.total_params, base.model.param_audit().total());
    }
    assert!(runs
        .windows(2)
        .all(|w| w[1].row.trainable_params <= w[0].row.trainable_params));
    assert!(matches!(
        transfer_sweep(&base, data, &cfg(), [LAYER_COUNT], false, |_| {}),
        Err(TransferError::NothingToTrain { .. })
    ));
}

#[test]
fn transfer_sweep_resumes_without_recomputing() {
    let spec = ModelSpec::micro();
    let base = base_checkpoint(1);
    let (tr, va, te) = (
        random_set(&spec, 10, 4),
        random_set(&spec, 5, 5),
        random_set(&spec, 5, 6),
    );
    let data = TargetData {
        train: &tr,
        val: &va,
        test: &te,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transfer.csv");
    let first = transfer_sweep_csv(&base, data, &cfg(), [19, 27], false, &path, |_| {}).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = String::from_utf8(bytes.clone()).unwrap();
    assert!(header.starts_with("k,mean_error_m,train_seconds,epochs,trainable_params,total_params\n"));
    let mut calls = 0;
    let again = transfer_sweep_csv(&base, data, &cfg(), [19, 27], false, &path, |_| calls += 1).unwrap();
    assert_eq!(calls, 0);
    assert_eq!(again, first);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);

    // A partial log only gets the missing rows.
    let more = transfer_sweep_csv(&base, data, &cfg(), [20, 19, 27], false, &path, |_| calls += 1).unwrap();
    assert_eq!(calls, 1);
    assert_eq!(more.iter().map(|r| r.k).collect::<Vec<_>>(), vec![19, 20, 27]);
}

#[test]
fn zero_drop_matches_plain_frozen_retrain() {
    let spec = ModelSpec::micro();
    let base = base_checkpoint(2);
    let (tr, va, te) = (
        random_set(&spec, 12, 7),
        random_set(&spec, 5, 8),
        random_set(&spec, 6, 9),
    );
    let data = TargetData {
        train: &tr,
        val: &va,
        test: &te,
    };
    let rows = ablation_sweep(&base, data, &cfg(), &[0.0], 3, |_| {}).unwrap();
    let plain = retrain(&base, 19, data, &cfg(), false).unwrap();
    assert_eq!(rows[0].mean_error_m, plain.row.mean_error_m);
    assert_eq!(rows[0].epochs, plain.row.epochs);
    assert_eq!(rows[0].retained_samples, 12);
}

#[test]
fn ablation_validates_and_resumes() {
    let spec = ModelSpec::micro();
    let base = base_checkpoint(3);
    let (tr, va, te) = (
        random_set(&spec, 20, 10),
        random_set(&spec, 5, 11),
        random_set(&spec, 5, 12),
    );
    let data = TargetData {
        train: &tr,
        val: &va,
        test: &te,
    };
    assert!(matches!(
        ablation_sweep(&base, data, &cfg(), &[0.5, 1.0], 1, |_| {}),
        Err(AblationError::InvalidFraction(_))
    ));
    assert!(matches!(
        ablation_sweep(&base, data, &cfg(), &[0.9], 1, |_| {}),
        Err(AblationError::InsufficientData {
            retained: 2,
            batch_size: 5,
            ..
        })
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation.csv");
    let mut seen = Vec::new();
    let rows = ablation_sweep_csv(&base, data, &cfg(), &[0.25, 0.5], 1, &path, |r| {
        seen.push(r.row.clone())
    })
    .unwrap();
    assert_eq!(rows, seen);
    assert_eq!(rows[1].retained_samples, 10);
    let bytes = std::fs::read(&path).unwrap();
    assert!(String::from_utf8_lossy(&bytes)
        .starts_with("drop_fraction,retained_samples,mean_error_m,epochs,train_seconds\n"));
    let again = ablation_sweep_csv(&base, data, &cfg(), &[0.25, 0.5], 1, &path, |_| panic!("recomputed")).unwrap();
    assert_eq!(again, rows);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(retained_indices(20, 0.5, 1).unwrap().len(), 10);
}
