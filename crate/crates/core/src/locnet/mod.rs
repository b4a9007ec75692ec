//! The 28-layer CNN position regressor: architecture, training, evaluation
//! and checkpoints.

pub mod act;
pub mod checkpoint;
pub mod conv;
pub mod net;
pub mod spec;
pub mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use net::{LayerParams, Model, Real, TensorSet, Workspace};
pub use spec::{Activation, LayerKind, LayerSpec, ModelSpec, ParamAudit, Shape};
pub use train::{train, train_on_features, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum LocnetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter budget violated:\n{audit}")]
    Budget { audit: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("nothing to train: every layer is frozen")]
    NothingToTrain,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean over every coordinate of every sample of `|pred - true|`.
pub fn mae_loss(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, LocnetError> {
    if pred.is_empty() {
        return Err(LocnetError::EmptyInput("mae_loss batch"));
    }
    if pred.len() != truth.len() {
        return Err(LocnetError::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs())
        .sum();
    Ok(sum / (2 * pred.len()) as f64)
}

/// Straight-line distance between a prediction and the truth, in meters.
pub fn euclidean_error(pred: [f64; 2], truth: [f64; 2]) -> f64 {
    ((truth[0] - pred[0]).powi(2) + (truth[1] - pred[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_error_m: f64,
    /// Per-sample Euclidean errors in dataset order.
    pub errors: Vec<f64>,
}

impl EvalReport {
    /// Empirical CDF points `(error, fraction <= error)`.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut e = self.errors.clone();
        e.sort_by(f64::total_cmp);
        let n = e.len() as f64;
        e.into_iter()
            .enumerate()
            .map(|(i, v)| (v, (i + 1) as f64 / n))
            .collect()
    }
}

/// Table-style rendering of a mean error in meters.
pub fn format_error_m(v: f64) -> String {
    format!("{v:.4}")
}

/// Mean Euclidean error of `model` over `test`.
pub fn evaluate(model: &Model<f32>, test: &TensorSet<f32>) -> Result<EvalReport, LocnetError> {
    evaluate_features(model, 0, test)
}

/// [`evaluate`] on activations entering 0-based layer `start`.
pub fn evaluate_features(model: &Model<f32>, start: usize, test: &TensorSet<f32>) -> Result<EvalReport, LocnetError> {
    if test.is_empty() {
        return Err(LocnetError::EmptyInput("test set"));
    }
    if test.shape != model.shape_before(start) {
        return Err(LocnetError::Shape(format!(
            "test tensors {:?} do not match layer {} input {:?}",
            test.shape,
            start + 1,
            model.shape_before(start)
        )));
    }
    let mut ws = Workspace::default();
    let errors: Vec<f64> = (0..test.len())
        .map(|i| {
            let p = model.forward(test.sample(i), start, &mut ws);
            let t = test.labels[i];
            euclidean_error([p[0] as f64, p[1] as f64], [t[0] as f64, t[1] as f64])
        })
        .collect();
    Ok(EvalReport {
        mean_error_m: errors.iter().sum::<f64>() / errors.len() as f64,
        errors,
    })
}
