//! Experiment configuration: strict parsing, validation, resolution and hashing.

use std::path::Path;

use csiloc::ablation::{default_drop_fractions, retained_count};
use csiloc::channel_sim::{Bounds, RoomSpec, SimConfig, TrajectoryKind, DEFAULT_TRACK_RATE_HZ};
use csiloc::csi_record::DEFAULT_ALIGN_TOLERANCE_S;
use csiloc::locnet::spec::LAYER_COUNT;
use csiloc::locnet::{ModelSpec, TrainConfig};
use csiloc::tensorize::WINDOW_PACKETS;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

/// One experiment: a simulated scenario plus everything needed to train on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario name used in file names and reports.
    pub scenario: String,
    /// Seed of the simulated sessions (trajectories and receiver noise).
    pub seed: u64,
    pub room: RoomSpec,
    pub trajectory: TrajectoryConfig,
    /// Channel simulation settings. `sim.seed` is derived per session from
    /// the top-level `seed`.
    #[serde(default)]
    pub sim: SimConfig,
    pub sessions: SessionsConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub path: TrajectoryKind,
    #[serde(default = "default_track_rate")]
    pub rate_hz: f64,
    /// Walking area; the whole room when absent.
    #[serde(default)]
    pub bounds: Option<Bounds>,
}

fn default_track_rate() -> f64 {
    DEFAULT_TRACK_RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SessionsConfig {
    pub count: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub window: usize,
    pub align_tolerance_s: f64,
    pub protocol: Protocol,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window: WINDOW_PACKETS,
            align_tolerance_s: DEFAULT_ALIGN_TOLERANCE_S,
            protocol: Protocol::FiveFold,
        }
    }
}

/// How sessions are assigned to train, validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    /// Five sessions rotated per fold: test = fold, validation = fold + 1,
    /// training = the other three.
    FiveFold,
    /// Two sessions: the first `train_fraction` of session 0 (by time) trains,
    /// the rest of session 0 validates and session 1 is the test set.
    Holdout { train_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// One of `default`, `tiny`, `micro`.
    pub profile: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            profile: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Numbers of leading layers to freeze, one sweep row each.
    pub ks: Vec<usize>,
    /// Start trainable layers from the base weights instead of re-initializing.
    pub warm_start: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            ks: (1..LAYER_COUNT).collect(),
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    /// Seed of the retained-subset draws.
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            fractions: default_drop_fractions(),
            seed: 0,
        }
    }
}

/// Seeds of one simulated session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSeeds {
    pub trajectory: u64,
    pub noise: u64,
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file. Unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.scenario.is_empty()
            || !self
                .scenario
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "scenario {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                self.scenario
            ));
        }
        self.room.validate()?;
        if self.sim.seed != 0 && self.sim.seed != self.seed {
            return bad("sim.seed is derived from the top-level seed; set `seed` instead".into());
        }
        if self.sessions.count == 0 {
            return bad("sessions.count must be >= 1".into());
        }
        if !(self.sessions.duration_s.is_finite() && self.sessions.duration_s > 0.0) {
            return bad("sessions.duration_s must be > 0".into());
        }
        if !(self.trajectory.rate_hz.is_finite() && self.trajectory.rate_hz > 0.0) {
            return bad("trajectory.rate_hz must be > 0".into());
        }
        if self.dataset.window != WINDOW_PACKETS {
            return bad(format!("dataset.window must be {WINDOW_PACKETS}"));
        }
        if !(self.dataset.align_tolerance_s.is_finite() && self.dataset.align_tolerance_s >= 0.0) {
            return bad("dataset.align_tolerance_s must be >= 0".into());
        }
        match self.dataset.protocol {
            Protocol::FiveFold if self.sessions.count != 5 => {
                return bad(format!(
                    "five-fold protocol needs 5 sessions, got {}",
                    self.sessions.count
                ));
            }
            Protocol::Holdout { train_fraction } => {
                if self.sessions.count != 2 {
                    return bad(format!(
                        "holdout protocol needs 2 sessions, got {}",
                        self.sessions.count
                    ));
                }
                if !(train_fraction > 0.0 && train_fraction < 1.0) {
                    return bad("holdout train_fraction must lie in (0, 1)".into());
                }
            }
            Protocol::FiveFold => {}
        }
        if ModelSpec::profile(&self.model.profile).is_none() {
            return bad(format!(
                "model.profile {:?} is not one of default, tiny, micro",
                self.model.profile
            ));
        }
        self.training.validate()?;
        if let Some(&k) = self.transfer.ks.iter().find(|&&k| k >= LAYER_COUNT) {
            return bad(format!("transfer.ks entry {k} must be < {LAYER_COUNT}"));
        }
        for &p in &self.ablation.fractions {
            if retained_count(1, p).is_err() {
                return bad(format!("ablation fraction {p} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// The config with every default written out and derived fields filled.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.sim.seed = r.seed;
        r.trajectory.bounds = Some(r.trajectory.bounds.unwrap_or_else(|| r.room.bounds()));
        r
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::profile(&self.model.profile).expect("profile checked by validate")
    }

    /// SHA-256 of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        digest_json(&self.resolved())
    }

    /// Hash of the sections that determine the simulated sessions.
    pub fn sim_hash(&self) -> String {
        let r = self.resolved();
        digest_json(&(&r.scenario, r.seed, &r.room, &r.trajectory, &r.sim, &r.sessions))
    }

    pub fn session_id(&self, index: usize) -> String {
        format!("{}-s{index}", self.scenario)
    }

    pub fn session_seeds(&self, index: usize) -> SessionSeeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        SessionSeeds {
            trajectory: rng.next_u64(),
            noise: rng.next_u64(),
        }
    }
}

pub(crate) fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(bytes))
}

/// JSON schema of [`ExperimentConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
