use std::path::{Path, PathBuf};

use csiloc::ablation::AblationError;
use csiloc::channel_sim::SimError;
use csiloc::csi_record::RecordError;
use csiloc::locnet::LocnetError;
use csiloc::tensorize::TensorizeError;
use csiloc::transfer::TransferError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Record { path: PathBuf, source: RecordError },
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: LocnetError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{} already holds run outputs; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tensorize(#[from] TensorizeError),
    #[error(transparent)]
    Locnet(#[from] LocnetError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Ablation(#[from] AblationError),
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("chart {}: {message}", path.display())]
    Chart { path: PathBuf, message: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
