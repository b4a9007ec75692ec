//! The append-only `runs.jsonl` log: one [`RunRecord`] per training run.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    /// SHA-256 of the resolved config stored in `config`.
    pub config_hash: String,
    /// Training seed.
    pub seed: u64,
    pub scenario: String,
    pub fold: usize,
    pub mean_error_m: f64,
    pub epochs: usize,
    pub train_seconds: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub frozen_layers: usize,
    pub drop_fraction: Option<f64>,
    /// Training samples the run saw.
    pub train_samples: usize,
    /// The resolved config the run used.
    pub config: serde_json::Value,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub base_checkpoint: Option<PathBuf>,
    pub base_checkpoint_sha256: Option<String>,
    pub checkpoint: Option<PathBuf>,
    /// Per-sample test errors, one per line.
    pub errors_file: Option<PathBuf>,
}

pub fn new_run_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

/// Appends one record as a single line under an exclusive file lock, so
/// concurrent writers never interleave partial lines.
pub fn append(path: &Path, record: &RunRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record).expect("records serialize");
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path).at(path)?;
    file.lock().at(path)?;
    let written = file.write_all(&line).and_then(|_| file.sync_data());
    let unlocked = file.unlock();
    written.and(unlocked).at(path)
}

/// A line of the log that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWarning {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LogWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Parses every line of the log; malformed lines become warnings and are
/// skipped. Blank lines are ignored.
pub fn read(path: &Path) -> Result<(Vec<RunRecord>, Vec<LogWarning>)> {
    let text = std::fs::read(path).at(path)?;
    Ok(parse(&text))
}

pub fn parse(text: &[u8]) -> (Vec<RunRecord>, Vec<LogWarning>) {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<RunRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => warnings.push(LogWarning {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    (records, warnings)
}

#[cfg(test)]
pub(crate) fn sample_record(scenario: &str, error: f64) -> RunRecord {
    RunRecord {
        run_id: new_run_id(),
        command: "train".into(),
        config_hash: "0".repeat(64),
        seed: 1,
        scenario: scenario.into(),
        fold: 0,
        mean_error_m: error,
        epochs: 12,
        train_seconds: 3.5,
        trainable_params: 100,
        total_params: 100,
        frozen_layers: 0,
        drop_fraction: None,
        train_samples: 50,
        config: serde_json::json!({}),
        data_dir: "data".into(),
        out_dir: "out".into(),
        base_checkpoint: None,
        base_checkpoint_sha256: None,
        checkpoint: None,
        errors_file: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.jsonl");
        let a = sample_record("office", 0.5);
        let b = RunRecord {
            drop_fraction: Some(0.45),
            ..sample_record("hall", 1.0)
        };
        append(&p, &a).unwrap();
        append(&p, &b).unwrap();
        let (records, warnings) = read(&p).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(records, vec![a, b]);
        assert_ne!(records[0].run_id, records[1].run_id);
    }

    #[test]
    fn malformed_lines_are_reported_and_skipped() {
        let good = serde_json::to_string(&sample_record("office", 0.5)).unwrap();
        let text = format!("{good}\n{{not json\n\n{good}\n{{\"run_id\": 3}}\n");
        let (records, warnings) = parse(text.as_bytes());
        assert_eq!(records.len(), 2);
        assert_eq!(warnings.iter().map(|w| w.line).collect::<Vec<_>>(), vec![2, 5]);
    }

    #[test]
    fn concurrent_writers_keep_lines_whole() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.jsonl");
        std::thread::scope(|s| {
            for t in 0..4 {
                let p = &p;
                s.spawn(move || {
                    for i in 0..25 {
                        append(p, &sample_record(&format!("s{t}"), i as f64)).unwrap();
                    }
                });
            }
        });
        let (records, warnings) = read(&p).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(records.len(), 100);
    }
}
