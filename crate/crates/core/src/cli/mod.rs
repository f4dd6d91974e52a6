//! Command implementations behind the `infoctl` binary.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rollout::{RolloutError, ScheduleError};
use crate::simenv::SimError;

mod commands;
mod config;

pub use commands::{
    analyze, audit_rewards, cmd_analyze, cmd_corpus, cmd_reward, cmd_simulate, load_corpus,
    load_traces, plan_episodes, run_plans, selftest, Analysis, AnalysisSummary, CorpusSummary,
    CurveRow, EpisodePlan, RewardAudit, RewardMismatch, SimulateSummary, StepMean, CORPUS_FILE,
    CURVES_FILE, TASKS_FILE, TRACES_FILE,
};
pub use config::{RunConfig, ENV_OUTPUT_DIR, ENV_SEED};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
