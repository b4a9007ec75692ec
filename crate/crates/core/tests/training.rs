mod common;

use common::random_set;
use csiloc::locnet::{evaluate, train, Checkpoint, Model, ModelSpec, TrainConfig};

#[test]
fn zero_learning_rate_stops_after_patience_plus_one() {
    let spec = ModelSpec::micro();
    let model: Model<f32> = Model::build(spec.clone(), 3).unwrap();
    let set = random_set(&spec, 8, 1);
    let cfg = TrainConfig {
        initial_lr: 0.0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (ck, report) = train(&model, &set, &set, &cfg).unwrap();
    assert_eq!(report.epochs_run, 11);
    assert!(report.stopped_early);
    assert_eq!(report.best_epoch, 1);
    assert_eq!(ck.model.params(), model.params());
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let spec = ModelSpec::micro();
    let model: Model<f32> = Model::build(spec.clone(), 4).unwrap();
    let train_set = random_set(&spec, 20, 2);
    let val_set = random_set(&spec, 6, 3);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 5,
        seed: 11,
        ..TrainConfig::default()
    };
    let (a, ra) = train(&model, &train_set, &val_set, &cfg).unwrap();
    let (b, rb) = train(&model, &train_set, &val_set, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(ra.train_losses, rb.train_losses);
    assert_ne!(a.model.params(), model.params());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.lnck");
    a.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, a);
    let e1 = evaluate(&a.model, &val_set).unwrap();
    let e2 = evaluate(&loaded.model, &val_set).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn frozen_layers_do_not_move() {
    let spec = ModelSpec::micro();
    let mut model: Model<f32> = Model::build(spec.clone(), 5).unwrap();
    for l in 0..10 {
        model.set_frozen(l, true);
    }
    let set = random_set(&spec, 12, 4);
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (ck, _) = train(&model, &set, &set, &cfg).unwrap();
    assert_eq!(&ck.model.params()[..10], &model.params()[..10]);
    assert_ne!(&ck.model.params()[10..], &model.params()[10..]);
}
