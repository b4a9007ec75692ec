//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, Outputs};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "csiloc", version, about = "CSI localization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured sessions as CSIR1 files plus a manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's session seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Write the dataset manifest (sessions, fold, normalization) of one fold.
    BuildDataset {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model from scratch and evaluate it on the fold's test split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Overrides the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split of a dataset.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Retrain a base model with its first k layers frozen, for each k.
    TransferSweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Retrain the dense head on random subsets of the training data.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-execute one logged run and check that it reproduces its error.
    Replay {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        run_id: String,
    },
    /// Summaries, sweep tables, charts and error CDFs from a run log.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Run log; defaults to runs.jsonl next to the output directory.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

impl OutArgs {
    fn outputs(&self) -> Outputs {
        Outputs::new(&self.out, self.runs.as_deref(), self.force)
    }
}

fn load(path: &std::path::Path, training_seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = training_seed {
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

/// Runs one command and returns what it printed on success.
pub fn execute(cli: Cli) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            force,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let m = pipeline::simulate(&cfg, &out, force)?;
            for s in &m.sessions {
                lines.push(format!("{}: {} packets, {} fixes", s.file, s.packets, s.fixes));
            }
            lines.push(format!("wrote {} sessions to {}", m.sessions.len(), out.display()));
        }
        Command::BuildDataset { data, out, force } => {
            let cfg = load(&data.config, None)?;
            let m = pipeline::build_dataset(&cfg, &data.data, data.fold, &out, force)?;
            let count = |s: &[pipeline::Slice]| s.iter().map(|x| x.end - x.start).sum::<usize>();
            lines.push(format!(
                "fold {}: {} train, {} val, {} test samples",
                m.fold,
                count(&m.train),
                count(&m.val),
                count(&m.test)
            ));
        }
        Command::Train { data, out, seed } => {
            let cfg = load(&data.config, seed)?;
            let r = pipeline::train_command(&cfg, &data.data, data.fold, &out.outputs())?;
            lines.push(format!(
                "run {}: mean error {} m after {} epochs ({:.1} s)",
                r.run_id,
                csiloc::locnet::format_error_m(r.mean_error_m),
                r.epochs,
                r.train_seconds
            ));
        }
        Command::Evaluate {
            data,
            checkpoint,
            split,
            out,
            force,
        } => {
            let cfg = load(&data.config, None)?;
            let s = pipeline::evaluate_command(&cfg, &checkpoint, &data.data, data.fold, &split, &out, force)?;
            lines.push(format!(
                "{} {} samples: mean error {} m",
                s.split,
                s.samples,
                csiloc::locnet::format_error_m(s.mean_error_m)
            ));
        }
        Command::TransferSweep { data, base, out, seed } => {
            let cfg = load(&data.config, seed)?;
            for r in pipeline::transfer_command(&cfg, &base, &data.data, data.fold, &out.outputs())? {
                lines.push(format!(
                    "k={:2} error {} m, {} epochs, {} trainable",
                    r.k,
                    csiloc::locnet::format_error_m(r.mean_error_m),
                    r.epochs,
                    r.trainable_params
                ));
            }
        }
        Command::Ablate { data, base, out, seed } => {
            let cfg = load(&data.config, seed)?;
            for r in pipeline::ablate_command(&cfg, &base, &data.data, data.fold, &out.outputs())? {
                lines.push(format!(
                    "drop {:.2}: {} samples, error {} m",
                    r.drop_fraction,
                    r.retained_samples,
                    csiloc::locnet::format_error_m(r.mean_error_m)
                ));
            }
        }
        Command::Replay { runs, run_id } => {
            let (records, _) = crate::runlog::read(&runs)?;
            let record = records
                .iter()
                .find(|r| r.run_id == run_id)
                .ok_or_else(|| CliError::Config(format!("{} has no run {run_id}", runs.display())))?;
            let again = pipeline::replay(record)?;
            let diff = (again - record.mean_error_m).abs();
            if diff > pipeline::REPLAY_TOLERANCE_M {
                return Err(CliError::Mismatch(format!(
                    "run {run_id}: logged {} m, replayed {again} m",
                    record.mean_error_m
                )));
            }
            lines.push(format!(
                "run {run_id}: logged {} m, replayed {again} m (difference {diff:e})",
                record.mean_error_m
            ));
        }
        Command::Report { runs, out } => {
            let rep = report::emit_report(&runs, &out)?;
            for w in &rep.warnings {
                lines.push(format!("warning: {w}"));
            }
            for r in &rep.summary {
                lines.push(format!("{:<16} {:>4} runs  {} m", r.scenario, r.runs, r.mean_error_m));
            }
            lines.push(format!(
                "{} warnings; wrote {} files to {}",
                rep.warnings.len(),
                rep.files.len(),
                out.display()
            ));
        }
    }
    Ok(lines)
}

/// Parses `argv` and runs the command. Exit status: 0 on success, 1 on
/// validation or input errors, 2 on usage errors.
pub fn run_command<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
