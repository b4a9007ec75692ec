//! The experiment pipeline behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use csiloc::ablation::{ablation_sweep, ablation_sweep_csv, AblationRow, ABLATION_FROZEN_LAYERS};
use csiloc::channel_sim::{gen_trajectory, simulate_csi, SimConfig, TrajectorySpec};
use csiloc::csi_record::{parse_session, write_session};
use csiloc::locnet::{evaluate, train, Checkpoint, EvalReport, Model, TensorSet, TrainReport};
use csiloc::tensorize::{build_samples, split_sessions, AmplitudeScaler, LabeledSample};
use csiloc::transfer::{retrain, transfer_sweep_csv, TargetData, TransferRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Protocol};
use crate::error::{CliError, IoContext, Result};
use crate::runlog::{self, RunRecord};

pub const SIM_MANIFEST: &str = "manifest.json";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const CHECKPOINT_FILE: &str = "model.lnck";
pub const ERRORS_FILE: &str = "errors.csv";
pub const TRANSFER_CSV: &str = "transfer.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
const SWEEP_STATE: &str = "sweep.json";

/// Written by `simulate` next to the session files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimManifest {
    pub scenario: String,
    pub config_hash: String,
    pub sim_hash: String,
    pub seed: u64,
    pub sessions: Vec<SessionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub id: String,
    /// File name relative to the data directory.
    pub file: String,
    pub trajectory_seed: u64,
    pub noise_seed: u64,
    pub packets: usize,
    pub fixes: usize,
    pub sha256: String,
}

/// Sample range `[start, end)` of one session's windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slice {
    pub session: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSessionInfo {
    pub id: String,
    pub aligned_triples: usize,
    pub samples: usize,
    pub skipped_windows: usize,
}

/// Sessions, fold assignment and normalization constants of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scenario: String,
    pub config_hash: String,
    pub sim_hash: String,
    pub fold: usize,
    pub protocol: Protocol,
    pub window: usize,
    pub align_tolerance_s: f64,
    pub sessions: Vec<DatasetSessionInfo>,
    pub train: Vec<Slice>,
    pub val: Vec<Slice>,
    pub test: Vec<Slice>,
    /// Amplitude normalization fitted on the training slices.
    pub scaler: AmplitudeScaler,
}

/// A dataset ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub train: TensorSet<f32>,
    pub val: TensorSet<f32>,
    pub test: TensorSet<f32>,
}

impl Prepared {
    pub fn target(&self) -> TargetData<'_> {
        TargetData {
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).expect("outputs serialize");
    text.push(b'\n');
    fs::write(path, text).at(path)
}

pub(crate) fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).at(path)?)))
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Creates `out`, refusing to reuse a non-empty directory unless `force`.
pub fn claim_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.is_file() {
        return Err(CliError::Exists(out.to_path_buf()));
    }
    if out.is_dir() && !force && fs::read_dir(out).at(out)?.next().is_some() {
        return Err(CliError::Exists(out.to_path_buf()));
    }
    fs::create_dir_all(out).at(out)
}

/// Simulates every configured session into `out` and writes its manifest.
pub fn simulate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<SimManifest> {
    claim_out_dir(out, force)?;
    let r = cfg.resolved();
    let mut sessions = Vec::with_capacity(r.sessions.count);
    for i in 0..r.sessions.count {
        let id = r.session_id(i);
        let seeds = r.session_seeds(i);
        let track = gen_trajectory(&TrajectorySpec {
            kind: r.trajectory.path.clone(),
            duration: r.sessions.duration_s,
            rate_hz: r.trajectory.rate_hz,
            bounds: r.trajectory.bounds.expect("resolved"),
            seed: seeds.trajectory,
        })?;
        let sim = SimConfig {
            seed: seeds.noise,
            ..r.sim.clone()
        };
        let session = simulate_csi(&id, &r.room, &track, &sim)?;
        let file = format!("{id}.csir");
        let path = out.join(&file);
        let bytes = write_session(&session).map_err(|source| CliError::Record {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, &bytes).at(&path)?;
        sessions.push(SessionEntry {
            id,
            file,
            trajectory_seed: seeds.trajectory,
            noise_seed: seeds.noise,
            packets: session.packet_count(),
            fixes: session.track.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = SimManifest {
        scenario: r.scenario.clone(),
        config_hash: cfg.hash(),
        sim_hash: cfg.sim_hash(),
        seed: r.seed,
        sessions,
    };
    write_json(&out.join(SIM_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Assignment of sample ranges to the three splits.
struct Assignment {
    train: Vec<Slice>,
    val: Vec<Slice>,
    test: Vec<Slice>,
}

fn assign(cfg: &ExperimentConfig, ids: &[String], counts: &[usize], fold: usize) -> Result<Assignment> {
    let whole = |i: usize| Slice {
        session: ids[i].clone(),
        start: 0,
        end: counts[i],
    };
    match cfg.dataset.protocol {
        Protocol::FiveFold => {
            let split = split_sessions(ids, fold)?;
            let index = |id: &String| ids.iter().position(|x| x == id).expect("split ids come from ids");
            Ok(Assignment {
                train: split.train.iter().map(|id| whole(index(id))).collect(),
                val: vec![whole(index(&split.val))],
                test: vec![whole(index(&split.test))],
            })
        }
        Protocol::Holdout { train_fraction } => {
            if fold != 0 {
                return Err(CliError::Config(format!(
                    "holdout protocol has only fold 0, got {fold}"
                )));
            }
            let cut = (train_fraction * counts[0] as f64).round() as usize;
            let part = |start, end| Slice {
                session: ids[0].clone(),
                start,
                end,
            };
            Ok(Assignment {
                train: vec![part(0, cut)],
                val: vec![part(cut, counts[0])],
                test: vec![whole(1)],
            })
        }
    }
}

/// Loads the simulated sessions in `data_dir`, cuts them into samples and
/// assembles the normalized train, validation and test sets of `fold`.
pub fn prepare_dataset(cfg: &ExperimentConfig, data_dir: &Path, fold: usize) -> Result<Prepared> {
    let sim: SimManifest = read_json(&data_dir.join(SIM_MANIFEST))?;
    if sim.sim_hash != cfg.sim_hash() {
        return Err(CliError::Mismatch(format!(
            "{} was simulated from a different scenario config than {:?}",
            data_dir.display(),
            cfg.scenario
        )));
    }
    let mut raw: Vec<Vec<LabeledSample>> = Vec::with_capacity(sim.sessions.len());
    let mut infos = Vec::with_capacity(sim.sessions.len());
    for entry in &sim.sessions {
        let path = data_dir.join(&entry.file);
        let bytes = fs::read(&path).at(&path)?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(CliError::Mismatch(format!(
                "{} does not match its manifest checksum",
                path.display()
            )));
        }
        let session = parse_session(&bytes).map_err(|source| CliError::Record { path, source })?;
        let built = build_samples(&session, cfg.dataset.window, cfg.dataset.align_tolerance_s)?;
        infos.push(DatasetSessionInfo {
            id: entry.id.clone(),
            aligned_triples: built.aligned_triples,
            samples: built.samples.len(),
            skipped_windows: built.skipped_windows,
        });
        raw.push(built.samples);
    }
    let ids: Vec<String> = infos.iter().map(|s| s.id.clone()).collect();
    let counts: Vec<usize> = infos.iter().map(|s| s.samples).collect();
    let a = assign(cfg, &ids, &counts, fold)?;
    let position = |s: &Slice| {
        ids.iter()
            .position(|id| *id == s.session)
            .expect("slices name known sessions")
    };
    let scaler = AmplitudeScaler::fit(a.train.iter().flat_map(|s| &raw[position(s)][s.start..s.end]))
        .ok_or_else(|| CliError::Config("the training split holds no samples".into()))?;

    let input = cfg.model_spec().input();
    let mut sets = [TensorSet::new(input), TensorSet::new(input), TensorSet::new(input)];
    // Sets are filled in slice order; sessions are released once converted.
    let mut order: Vec<(usize, usize, &Slice)> = Vec::new();
    for (set, slices) in [&a.train, &a.val, &a.test].into_iter().enumerate() {
        for (rank, s) in slices.iter().enumerate() {
            order.push((set, rank, s));
        }
    }
    let mut parts: Vec<Vec<Option<TensorSet<f32>>>> = vec![
        vec![None; a.train.len()],
        vec![None; a.val.len()],
        vec![None; a.test.len()],
    ];
    for (session, samples) in raw.iter_mut().enumerate() {
        let mut samples = std::mem::take(samples);
        for x in &mut samples {
            scaler.apply(x);
        }
        for &(set, rank, s) in order.iter().filter(|(_, _, s)| position(s) == session) {
            parts[set][rank] = Some(TensorSet::from_samples(&samples[s.start..s.end], input));
        }
    }
    for (set, p) in parts.into_iter().enumerate() {
        for part in p.into_iter().flatten() {
            sets[set].data.extend_from_slice(&part.data);
            sets[set].labels.extend_from_slice(&part.labels);
        }
    }
    let [train, val, test] = sets;
    let manifest = DatasetManifest {
        scenario: cfg.scenario.clone(),
        config_hash: cfg.hash(),
        sim_hash: sim.sim_hash,
        fold,
        protocol: cfg.dataset.protocol.clone(),
        window: cfg.dataset.window,
        align_tolerance_s: cfg.dataset.align_tolerance_s,
        sessions: infos,
        train: a.train,
        val: a.val,
        test: a.test,
        scaler,
    };
    Ok(Prepared {
        manifest,
        train,
        val,
        test,
    })
}

/// Writes the dataset manifest of `fold` into `out`.
pub fn build_dataset(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    fold: usize,
    out: &Path,
    force: bool,
) -> Result<DatasetManifest> {
    let prepared = prepare_dataset(cfg, data_dir, fold)?;
    claim_out_dir(out, force)?;
    write_json(&out.join(DATASET_MANIFEST), &prepared.manifest)?;
    Ok(prepared.manifest)
}

fn write_errors(path: &Path, eval: &EvalReport) -> Result<()> {
    let mut text = String::with_capacity(eval.errors.len() * 12 + 8);
    text.push_str("error_m\n");
    for e in &eval.errors {
        text.push_str(&format!("{e}\n"));
    }
    fs::write(path, text).at(path)
}

/// Reads an errors file written by a training run.
pub fn read_errors(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    reader
        .deserialize::<(f64,)>()
        .map(|r| r.map(|(e,)| e))
        .collect::<Result<_, _>>()
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

/// Result of training one model from scratch.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub eval: EvalReport,
    pub dataset: DatasetManifest,
    pub train_samples: usize,
    pub seconds: f64,
}

/// Trains and evaluates a fresh model on `fold` without writing anything.
pub fn run_training(cfg: &ExperimentConfig, data_dir: &Path, fold: usize) -> Result<TrainRun> {
    let prepared = prepare_dataset(cfg, data_dir, fold)?;
    let model: Model<f32> = Model::build(cfg.model_spec(), cfg.training.seed)?;
    let started = Instant::now();
    let (mut checkpoint, report) = train(&model, &prepared.train, &prepared.val, &cfg.training)?;
    let seconds = started.elapsed().as_secs_f64();
    let eval = evaluate(&checkpoint.model, &prepared.test)?;
    checkpoint.meta.config_hash = cfg.hash();
    Ok(TrainRun {
        checkpoint,
        report,
        eval,
        train_samples: prepared.train.len(),
        dataset: prepared.manifest,
        seconds,
    })
}

/// Where a command writes its outputs and logs its runs.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub dir: PathBuf,
    pub runs: PathBuf,
    pub force: bool,
}

impl Outputs {
    /// Logs to `runs.jsonl` in the parent of `dir` unless `runs` is given.
    pub fn new(dir: &Path, runs: Option<&Path>, force: bool) -> Self {
        let runs = runs.map(Path::to_path_buf).unwrap_or_else(|| {
            let parent = dir
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            parent.join("runs.jsonl")
        });
        Self {
            dir: dir.to_path_buf(),
            runs,
            force,
        }
    }
}

struct RecordBase<'a> {
    cfg: &'a ExperimentConfig,
    command: &'a str,
    fold: usize,
    data_dir: &'a Path,
    out: &'a Path,
    base: Option<(&'a Path, &'a str)>,
}

impl RecordBase<'_> {
    fn record(&self, eval: &EvalReport) -> RunRecord {
        let resolved = self.cfg.resolved();
        RunRecord {
            run_id: runlog::new_run_id(),
            command: self.command.into(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.training.seed,
            scenario: self.cfg.scenario.clone(),
            fold: self.fold,
            mean_error_m: eval.mean_error_m,
            epochs: 0,
            train_seconds: 0.0,
            trainable_params: 0,
            total_params: 0,
            frozen_layers: 0,
            drop_fraction: None,
            train_samples: 0,
            config: serde_json::to_value(&resolved).expect("configs serialize"),
            data_dir: absolute(self.data_dir),
            out_dir: absolute(self.out),
            base_checkpoint: self.base.map(|(p, _)| absolute(p)),
            base_checkpoint_sha256: self.base.map(|(_, h)| h.to_string()),
            checkpoint: None,
            errors_file: None,
        }
    }
}

/// `train`: fits a fresh model, writes its outputs and logs one run.
pub fn train_command(cfg: &ExperimentConfig, data_dir: &Path, fold: usize, out: &Outputs) -> Result<RunRecord> {
    claim_out_dir(&out.dir, out.force)?;
    let run = run_training(cfg, data_dir, fold)?;
    let ck_path = out.dir.join(CHECKPOINT_FILE);
    run.checkpoint.save(&ck_path).map_err(|source| CliError::Checkpoint {
        path: ck_path.clone(),
        source,
    })?;
    write_json(&out.dir.join("config.json"), &cfg.resolved())?;
    write_json(&out.dir.join(DATASET_MANIFEST), &run.dataset)?;
    write_json(&out.dir.join("train_report.json"), &run.report)?;
    let errors = out.dir.join(ERRORS_FILE);
    write_errors(&errors, &run.eval)?;
    let audit = run.checkpoint.model.param_audit();
    let base = RecordBase {
        cfg,
        command: "train",
        fold,
        data_dir,
        out: &out.dir,
        base: None,
    };
    let record = RunRecord {
        epochs: run.report.epochs_run,
        train_seconds: run.seconds,
        trainable_params: audit.total(),
        total_params: audit.total(),
        train_samples: run.train_samples,
        checkpoint: Some(absolute(&ck_path)),
        errors_file: Some(absolute(&errors)),
        ..base.record(&run.eval)
    };
    runlog::append(&out.runs, &record)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub scenario: String,
    pub fold: usize,
    pub split: String,
    pub samples: usize,
    pub mean_error_m: f64,
}

/// `evaluate`: scores a checkpoint on one split of a dataset.
pub fn evaluate_command(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_dir: &Path,
    fold: usize,
    split: &str,
    out: &Path,
    force: bool,
) -> Result<EvalSummary> {
    let ck = load_checkpoint(checkpoint)?;
    let prepared = prepare_dataset(cfg, data_dir, fold)?;
    let set = match split {
        "train" => &prepared.train,
        "val" => &prepared.val,
        "test" => &prepared.test,
        other => return Err(CliError::Config(format!("unknown split {other:?}"))),
    };
    let eval = evaluate(&ck.model, set)?;
    claim_out_dir(out, force)?;
    write_errors(&out.join(ERRORS_FILE), &eval)?;
    let summary = EvalSummary {
        checkpoint: absolute(checkpoint),
        scenario: cfg.scenario.clone(),
        fold,
        split: split.into(),
        samples: set.len(),
        mean_error_m: eval.mean_error_m,
    };
    write_json(&out.join("eval.json"), &summary)?;
    Ok(summary)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn load_base(cfg: &ExperimentConfig, path: &Path) -> Result<(Checkpoint, String)> {
    let ck = load_checkpoint(path)?;
    let want = cfg.model_spec();
    if ck.spec().name != want.name {
        return Err(CliError::Mismatch(format!(
            "base checkpoint {} is a {:?} model but the config asks for {:?}",
            path.display(),
            ck.spec().name,
            want.name
        )));
    }
    Ok((ck, file_sha256(path)?))
}

/// Identity of a sweep directory, used to decide whether a rerun resumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepState {
    command: String,
    config_hash: String,
    base_sha256: String,
    fold: usize,
    data_sim_hash: String,
}

/// Prepares a sweep directory: resumes when it holds the same sweep, starts
/// fresh when it is empty (or `force`), refuses otherwise.
fn claim_sweep_dir(out: &Path, state: &SweepState, force: bool, results: &str) -> Result<()> {
    let state_path = out.join(SWEEP_STATE);
    if !force && state_path.is_file() {
        let existing: SweepState = read_json(&state_path)?;
        if existing == *state {
            return Ok(());
        }
        return Err(CliError::Exists(out.to_path_buf()));
    }
    claim_out_dir(out, force)?;
    for stale in [results, SWEEP_STATE] {
        let p = out.join(stale);
        if p.exists() {
            fs::remove_file(&p).at(&p)?;
        }
    }
    write_json(&state_path, state)
}

/// `transfer-sweep`: retrains `base` on the target scenario once per frozen
/// prefix length, appending one CSV row and one run record per `k`.
pub fn transfer_command(
    cfg: &ExperimentConfig,
    base_path: &Path,
    data_dir: &Path,
    fold: usize,
    out: &Outputs,
) -> Result<Vec<TransferRow>> {
    let (base, base_sha) = load_base(cfg, base_path)?;
    let prepared = prepare_dataset(cfg, data_dir, fold)?;
    let state = SweepState {
        command: "transfer-sweep".into(),
        config_hash: cfg.hash(),
        base_sha256: base_sha.clone(),
        fold,
        data_sim_hash: prepared.manifest.sim_hash.clone(),
    };
    claim_sweep_dir(&out.dir, &state, out.force, TRANSFER_CSV)?;
    write_json(&out.dir.join(DATASET_MANIFEST), &prepared.manifest)?;
    let rb = RecordBase {
        cfg,
        command: "transfer-sweep",
        fold,
        data_dir,
        out: &out.dir,
        base: Some((base_path, &base_sha)),
    };
    let mut failure = None;
    let rows = transfer_sweep_csv(
        &base,
        prepared.target(),
        &cfg.training,
        cfg.transfer.ks.iter().copied(),
        cfg.transfer.warm_start,
        &out.dir.join(TRANSFER_CSV),
        |run| {
            if failure.is_some() {
                return;
            }
            let errors = out.dir.join(format!("errors_k{:02}.csv", run.row.k));
            let ck_path = out.dir.join(format!("model_k{:02}.lnck", run.row.k));
            let mut checkpoint = run.checkpoint.clone();
            checkpoint.meta.config_hash = cfg.hash();
            if let Err(source) = checkpoint.save(&ck_path) {
                failure = Some(CliError::Checkpoint { path: ck_path, source });
                return;
            }
            let record = RunRecord {
                epochs: run.row.epochs,
                train_seconds: run.row.train_seconds,
                trainable_params: run.row.trainable_params,
                total_params: run.row.total_params,
                frozen_layers: run.row.k,
                train_samples: prepared.train.len(),
                checkpoint: Some(absolute(&ck_path)),
                errors_file: Some(absolute(&errors)),
                ..rb.record(&run.eval)
            };
            failure = write_errors(&errors, &run.eval)
                .and_then(|_| runlog::append(&out.runs, &record))
                .err();
        },
    )?;
    failure.map_or(Ok(rows), Err)
}

/// `ablate`: dense-head retraining on subsets of the target training data.
pub fn ablate_command(
    cfg: &ExperimentConfig,
    base_path: &Path,
    data_dir: &Path,
    fold: usize,
    out: &Outputs,
) -> Result<Vec<AblationRow>> {
    let (base, base_sha) = load_base(cfg, base_path)?;
    let prepared = prepare_dataset(cfg, data_dir, fold)?;
    let state = SweepState {
        command: "ablate".into(),
        config_hash: cfg.hash(),
        base_sha256: base_sha.clone(),
        fold,
        data_sim_hash: prepared.manifest.sim_hash.clone(),
    };
    claim_sweep_dir(&out.dir, &state, out.force, ABLATION_CSV)?;
    write_json(&out.dir.join(DATASET_MANIFEST), &prepared.manifest)?;
    let rb = RecordBase {
        cfg,
        command: "ablate",
        fold,
        data_dir,
        out: &out.dir,
        base: Some((base_path, &base_sha)),
    };
    let audit = base.model.param_audit();
    let trainable = audit.total() - audit.prefix(ABLATION_FROZEN_LAYERS);
    let mut failure = None;
    let rows = ablation_sweep_csv(
        &base,
        prepared.target(),
        &cfg.training,
        &cfg.ablation.fractions,
        cfg.ablation.seed,
        &out.dir.join(ABLATION_CSV),
        |run| {
            if failure.is_some() {
                return;
            }
            let errors = out.dir.join(format!("errors_p{:.2}.csv", run.row.drop_fraction));
            let record = RunRecord {
                epochs: run.row.epochs,
                train_seconds: run.row.train_seconds,
                trainable_params: trainable,
                total_params: audit.total(),
                frozen_layers: ABLATION_FROZEN_LAYERS,
                drop_fraction: Some(run.row.drop_fraction),
                train_samples: run.row.retained_samples,
                errors_file: Some(absolute(&errors)),
                ..rb.record(&run.eval)
            };
            failure = write_errors(&errors, &run.eval)
                .and_then(|_| runlog::append(&out.runs, &record))
                .err();
        },
    )?;
    failure.map_or(Ok(rows), Err)
}

/// Largest difference between a logged and a replayed mean error.
pub const REPLAY_TOLERANCE_M: f64 = 1e-6;

/// Re-executes the training run described by `record` from its stored config
/// and seed, writing nothing, and returns the reproduced mean error.
pub fn replay(record: &RunRecord) -> Result<f64> {
    let cfg: ExperimentConfig = serde_json::from_value(record.config.clone())
        .map_err(|e| CliError::Config(format!("run {}: {e}", record.run_id)))?;
    cfg.validate()?;
    if cfg.hash() != record.config_hash {
        return Err(CliError::Mismatch(format!(
            "run {}: stored config does not hash to {}",
            record.run_id, record.config_hash
        )));
    }
    let base = || -> Result<Checkpoint> {
        let path = record
            .base_checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Mismatch(format!("run {} names no base checkpoint", record.run_id)))?;
        let (ck, sha) = load_base(&cfg, path)?;
        if Some(&sha) != record.base_checkpoint_sha256.as_ref() {
            return Err(CliError::Mismatch(format!(
                "{} changed since run {}",
                path.display(),
                record.run_id
            )));
        }
        Ok(ck)
    };
    match record.command.as_str() {
        "train" => Ok(run_training(&cfg, &record.data_dir, record.fold)?.eval.mean_error_m),
        "transfer-sweep" => {
            let base = base()?;
            let prepared = prepare_dataset(&cfg, &record.data_dir, record.fold)?;
            let run = retrain(
                &base,
                record.frozen_layers,
                prepared.target(),
                &cfg.training,
                cfg.transfer.warm_start,
            )?;
            Ok(run.row.mean_error_m)
        }
        "ablate" => {
            let base = base()?;
            let p = record
                .drop_fraction
                .ok_or_else(|| CliError::Mismatch(format!("run {} has no drop fraction", record.run_id)))?;
            let prepared = prepare_dataset(&cfg, &record.data_dir, record.fold)?;
            let rows = ablation_sweep(&base, prepared.target(), &cfg.training, &[p], cfg.ablation.seed, |_| {})?;
            Ok(rows[0].mean_error_m)
        }
        other => Err(CliError::Mismatch(format!(
            "run {} has unknown command {other:?}",
            record.run_id
        ))),
    }
}
