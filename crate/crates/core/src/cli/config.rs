use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::reward::RewardConfig;
use crate::rollout::{AnnealSchedule, EpisodeConfig};
use crate::simenv::{CorpusSpec, Profile};

use super::CliError;

pub const ENV_SEED: &str = "INFOCTL_SEED";
pub const ENV_OUTPUT_DIR: &str = "INFOCTL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub controller: ControllerConfig,
    pub reward: RewardConfig,
    pub schedule: AnnealSchedule,
    pub budget: usize,
    pub corpus: CorpusSpec,
    pub agent_profile: Profile,
    pub episodes_per_epoch: usize,
    /// Seeds episode planning. The corpus has its own seed.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            reward: RewardConfig::default(),
            schedule: AnnealSchedule::default(),
            budget: 8,
            corpus: CorpusSpec::default(),
            agent_profile: Profile::Compliant,
            episodes_per_epoch: 100,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `INFOCTL_SEED` and `INFOCTL_OUTPUT_DIR` as read by `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(s) = lookup(ENV_SEED) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{ENV_SEED}={s:?} is not an integer")))?;
        }
        if let Some(dir) = lookup(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.episodes_per_epoch == 0 {
            return bad("episodes_per_epoch must be at least 1".into());
        }
        self.controller.validate().map_err(CliError::Config)?;
        self.reward.validate().map_err(CliError::Config)?;
        self.schedule
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.corpus.validate()?;
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            controller: self.controller,
            reward: self.reward,
            budget: self.budget,
        }
    }
}
