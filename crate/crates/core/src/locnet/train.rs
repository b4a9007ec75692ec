//! Mini-batch Adamax on the mean absolute error with plateau learning-rate
//! decay, early stopping and best-weight restoration.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::net::{LayerParams, Model, TensorSet, Workspace};
use super::LocnetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adamax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier applied when validation loss plateaus.
    pub lr_plateau_factor: f64,
    pub lr_plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Upper bound for caching the frozen-prefix activations of the training
    /// and validation sets; larger sets recompute the prefix every epoch.
    pub feature_cache_limit_mb: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 30,
            optimizer: Optimizer::Adamax,
            initial_lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            lr_plateau_factor: 0.5,
            lr_plateau_patience: 5,
            early_stop_patience: 10,
            max_epochs: 200,
            seed: 0,
            feature_cache_limit_mb: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LocnetError> {
        let bad = |m: &str| Err(LocnetError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return bad("initial_lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.lr_plateau_factor > 0.0 && self.lr_plateau_factor <= 1.0) {
            return bad("lr_plateau_factor must lie in (0, 1]");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    /// 1-based epoch whose weights were kept; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub wall_seconds: f64,
    pub trainable_params: usize,
}

struct Adamax {
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    step: i32,
    m: Vec<LayerParams<f32>>,
    u: Vec<LayerParams<f32>>,
}

impl Adamax {
    fn new(model: &Model<f32>, cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            epsilon: cfg.epsilon as f32,
            step: 0,
            m: model.zero_grads(),
            u: model.zero_grads(),
        }
    }

    fn apply(&mut self, model: &mut Model<f32>, grads: &[LayerParams<f32>], lr: f64) {
        self.step += 1;
        let step_lr = (lr / (1.0 - (self.beta1 as f64).powi(self.step))) as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let frozen = model.spec().frozen_flags();
        for (l, g) in grads.iter().enumerate() {
            if frozen[l] || g.is_empty() {
                continue;
            }
            let p = &mut model.params[l];
            let (m, u) = (&mut self.m[l], &mut self.u[l]);
            for (((w, g), m), u) in p
                .weight
                .iter_mut()
                .chain(p.bias.iter_mut())
                .zip(g.weight.iter().chain(&g.bias))
                .zip(m.weight.iter_mut().chain(m.bias.iter_mut()))
                .zip(u.weight.iter_mut().chain(u.bias.iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *u = (b2 * *u).max(g.abs());
                *w -= step_lr * *m / (*u + eps);
            }
        }
    }
}

fn check_set(model: &Model<f32>, set: &TensorSet<f32>, what: &'static str) -> Result<(), LocnetError> {
    if set.is_empty() {
        return Err(LocnetError::EmptyInput(what));
    }
    if set.shape != model.spec().input() {
        return Err(LocnetError::Shape(format!(
            "{what} tensors {:?} do not match model input {:?}",
            set.shape,
            model.spec().input()
        )));
    }
    Ok(())
}

/// Trains the unfrozen layers of `model` and returns the best-validation
/// weights.
///
/// Leading frozen layers are evaluated once per sample up front and their
/// outputs reused every epoch, which gives results bit-identical to running
/// the full network.
pub fn train(
    model: &Model<f32>,
    train_set: &TensorSet<f32>,
    val_set: &TensorSet<f32>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), LocnetError> {
    cfg.validate()?;
    check_set(model, train_set, "training set")?;
    check_set(model, val_set, "validation set")?;
    if model.spec().layers.iter().all(|l| l.frozen) {
        return Err(LocnetError::NothingToTrain);
    }
    let prefix = model.spec().frozen_prefix();
    let cache_bytes = (train_set.len() + val_set.len()) * model.shape_before(prefix).len() * 4;
    if prefix > 0 && cache_bytes <= cfg.feature_cache_limit_mb << 20 {
        let started = Instant::now();
        let train_in = model.features(train_set, prefix);
        let val_in = model.features(val_set, prefix);
        let (ck, mut report) = train_on_features(model, prefix, &train_in, &val_in, cfg)?;
        report.wall_seconds = started.elapsed().as_secs_f64();
        Ok((ck, report))
    } else {
        train_on_features(model, 0, train_set, val_set, cfg)
    }
}

/// Like [`train`], but `train_in` and `val_in` already hold the activations
/// entering 0-based layer `start`; every layer below `start` must be frozen.
pub fn train_on_features(
    model: &Model<f32>,
    start: usize,
    train_in: &TensorSet<f32>,
    val_in: &TensorSet<f32>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), LocnetError> {
    cfg.validate()?;
    if model.spec().frozen_prefix() < start {
        return Err(LocnetError::Config(format!(
            "layers below {} must be frozen",
            start + 1
        )));
    }
    if model.spec().layers.iter().all(|l| l.frozen) {
        return Err(LocnetError::NothingToTrain);
    }
    for (set, what) in [(train_in, "training set"), (val_in, "validation set")] {
        if set.is_empty() {
            return Err(LocnetError::EmptyInput(what));
        }
        if set.shape != model.shape_before(start) {
            return Err(LocnetError::Shape(format!(
                "{what} features {:?} do not match layer {} input {:?}",
                set.shape,
                start + 1,
                model.shape_before(start)
            )));
        }
    }
    let started = Instant::now();
    let mut model = model.clone();
    let mut report = TrainReport {
        trainable_params: model.trainable_params(),
        ..TrainReport::default()
    };

    let mut ws = Workspace::default();
    let mut grads = model.zero_grads();
    let mut opt = Adamax::new(&model, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5348_5546); // shuffle stream
    let mut order: Vec<usize> = (0..train_in.len()).collect();
    let val_all: Vec<usize> = (0..val_in.len()).collect();

    let mut lr = cfg.initial_lr;
    let mut best_params = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut since_plateau_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let loss = model.loss_and_grad(train_in, batch, start, &mut ws, &mut grads);
            epoch_loss += loss as f64 * batch.len() as f64;
            opt.apply(&mut model, &grads, lr);
        }
        let val = model.batch_mae(val_in, &val_all, start, &mut ws) as f64;
        report.train_losses.push(epoch_loss / train_in.len() as f64);
        report.val_losses.push(val);
        report.learning_rates.push(lr);
        report.epochs_run = epoch;

        if val < best_val {
            best_val = val;
            best_params.clone_from(&model.params);
            report.best_epoch = epoch;
            since_best = 0;
            since_plateau_best = 0;
        } else {
            since_best += 1;
            since_plateau_best += 1;
            if since_plateau_best >= cfg.lr_plateau_patience.max(1) {
                lr *= cfg.lr_plateau_factor;
                since_plateau_best = 0;
            }
        }
        if since_best >= cfg.early_stop_patience {
            report.stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    report.best_val_loss = best_val.is_finite().then_some(best_val);
    report.wall_seconds = started.elapsed().as_secs_f64();
    let meta = CheckpointMeta {
        epochs_run: report.epochs_run,
        final_val_loss: report.best_val_loss,
        seed: cfg.seed,
        config_hash: String::new(),
    };
    Ok((Checkpoint::new(model, meta), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locnet::spec::ModelSpec;

    fn random_set(model: &Model<f32>, n: usize, seed: u64) -> TensorSet<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = TensorSet::new(model.spec().input());
        for _ in 0..n {
            let v: Vec<f32> = (0..set.shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            set.push(&v, [rng.gen_range(0.0..6.5), rng.gen_range(0.0..2.5)]);
        }
        set
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let model: Model<f32> = Model::build(ModelSpec::micro(), 1).unwrap();
        let set = random_set(&model, 4, 2);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (ck, report) = train(&model, &set, &set, &cfg).unwrap();
        assert_eq!(report.epochs_run, 0);
        assert_eq!(ck.model, model);
    }

    #[test]
    fn all_frozen_is_rejected() {
        let mut model: Model<f32> = Model::build(ModelSpec::micro(), 1).unwrap();
        for l in 0..28 {
            model.set_frozen(l, true);
        }
        let set = random_set(&model, 2, 3);
        assert!(matches!(
            train(&model, &set, &set, &TrainConfig::default()),
            Err(LocnetError::NothingToTrain)
        ));
    }

    #[test]
    fn cached_prefix_matches_full_forward() {
        let mut model: Model<f32> = Model::build(ModelSpec::micro(), 5).unwrap();
        for l in 0..19 {
            model.set_frozen(l, true);
        }
        let set = random_set(&model, 12, 4);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let (cached, _) = train(&model, &set, &set, &cfg).unwrap();
        let no_cache = TrainConfig {
            feature_cache_limit_mb: 0,
            ..cfg
        };
        let (full, _) = train(&model, &set, &set, &no_cache).unwrap();
        assert_eq!(cached.model, full.model);
    }
}
