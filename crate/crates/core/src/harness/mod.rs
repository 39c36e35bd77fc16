//! Experiment orchestration and file emission.

mod compare;
mod config;
mod experiment;

pub use compare::{compare_methods, ComparisonReport, ComparisonRow, MethodSummary};
pub use config::{
    default_space, AdvSettings, BenchSettings, ExperimentConfig, HessregSettings, LandscapeSettings, Overrides,
};
pub use experiment::{
    build_bench, load_bench_table, load_dataset, load_trajectory, probe_checkpoint, run_experiment, run_single, scan_checkpoint,
    workers_from_env, Checkpoint, ExperimentSummary, FinalArch, RunSummary, WORKERS_ENV,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::data::DataError;
use crate::minibench::BenchError;
use crate::search::SearchError;
use crate::supernet::SupernetError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{} run(s) aborted: {}", .0.len(), .0.join("; "))]
    Aborted(Vec<String>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn parse(path: &Path, message: impl ToString) -> Self {
        HarnessError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
