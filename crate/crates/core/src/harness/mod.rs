//! Experiment orchestration: training runs, greedy evaluation, checkpoints,
//! sweeps over (team size x reward x learner x channel) and CSV reports.

mod checkpoint;
mod report;
mod sweep;
mod team;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::learner::LearnerError;
use crate::model::{ConfigError, ConfigFileError, LearnerKind, RewardKind, WorldConfig};
use crate::nn::NnError;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
pub use report::{
    compare_rewards, emit_report, mean_std, read_records_csv, read_records_dir, summarize, write_records_csv,
    ComparisonRow, ReportFiles, SummaryRow,
};
pub use sweep::{run_sweep, ExperimentSpec, SweepAxes, SweepOutcome};
pub use team::{action_spec, critic_input_len, Team, TeamActions};
pub use train::{
    evaluate, run_training, run_training_to_dir, run_training_with, write_training_csv, EpisodeLog, TrainingAbort,
    TrainingLog, TrainingRun,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    ConfigFile(#[from] ConfigFileError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {message}")]
    Csv { path: String, message: String },
    #[error("bad checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("bad experiment spec: {0}")]
    Spec(String),
    #[error("no records to report")]
    NoRecords,
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn csv(path: &Path, err: impl ToString) -> Self {
        HarnessError::Csv { path: path.display().to_string(), message: err.to_string() }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) | HarnessError::ConfigFile(_) => "config",
            HarnessError::Env(_) => "env",
            HarnessError::Learner(LearnerError::NonFiniteLoss { .. }) => "non_finite_loss",
            HarnessError::Learner(_) => "learner",
            HarnessError::Nn(_) => "nn",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Checkpoint { .. } => "checkpoint",
            HarnessError::Spec(_) => "spec",
            HarnessError::NoRecords => "no_records",
        }
    }
}

/// The axis values and seed that name one training run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunIdentity {
    pub n_bodyguards: usize,
    pub reward_kind: RewardKind,
    pub learner_kind: LearnerKind,
    pub communication_enabled: bool,
    pub seed: u64,
}

impl RunIdentity {
    pub fn of(cfg: &WorldConfig) -> Self {
        RunIdentity {
            n_bodyguards: cfg.n_bodyguards,
            reward_kind: cfg.reward_kind,
            learner_kind: cfg.learner_kind,
            communication_enabled: cfg.communication_enabled,
            seed: cfg.seed,
        }
    }

    /// Same identity without the seed: one axis combination.
    pub fn combination(&self) -> RunIdentity {
        RunIdentity { seed: 0, ..self.clone() }
    }

    /// File-system friendly name, e.g. `n2_Composite_Maddpg_comm-on_seed0`.
    pub fn slug(&self) -> String {
        format!(
            "n{}_{}_{}_comm-{}_seed{}",
            self.n_bodyguards,
            self.reward_kind,
            self.learner_kind,
            if self.communication_enabled { "on" } else { "off" },
            self.seed
        )
    }
}

/// One greedy evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub run: RunIdentity,
    /// Training episodes completed when the evaluation ran.
    pub episode_index: usize,
    /// Index of the episode within the evaluation batch.
    pub eval_episode: usize,
    pub total_threat: f64,
    /// Episode return averaged over agents.
    pub mean_reward: f64,
    /// Fraction of agent-steps with a non-silent utterance.
    pub utterance_rate: f64,
}

pub(crate) fn create_dir(path: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}
