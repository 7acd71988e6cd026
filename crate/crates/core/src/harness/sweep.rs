use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{LearnerKind, RewardKind, WorldConfig};

use super::report::{emit_report, ReportFiles};
use super::train::{run_training_to_dir, TrainingAbort};
use super::{HarnessError, RunIdentity};

/// Lists of values swept over; the sweep is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub n_bodyguards: Vec<usize>,
    pub reward_kind: Vec<RewardKind>,
    pub learner_kind: Vec<LearnerKind>,
    pub communication_enabled: Vec<bool>,
}

/// A sweep: base config, axes, seeds and where to write results.
///
/// TOML layout:
///
/// ```toml
/// output_dir = "out/sweep"
/// seeds = [0, 1, 2, 3, 4]
///
/// [axes]
/// n_bodyguards = [2, 3, 4]
/// reward_kind = ["ThreatOnly", "BinaryThreat", "Composite", "CommPenalty"]
/// learner_kind = ["Maddpg"]
/// communication_enabled = [true, false]
///
/// [base]
/// train_episodes = 2000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: WorldConfig,
    pub axes: SweepAxes,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Result of [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// Run directories, in axis order.
    pub runs: Vec<(RunIdentity, PathBuf)>,
    /// Runs that stopped on a non-finite loss.
    pub aborted: Vec<(RunIdentity, TrainingAbort)>,
    pub report: ReportFiles,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Non-empty axes, distinct seeds and a valid config at every point.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let a = &self.axes;
        let empty = [
            ("n_bodyguards", a.n_bodyguards.is_empty()),
            ("reward_kind", a.reward_kind.is_empty()),
            ("learner_kind", a.learner_kind.is_empty()),
            ("communication_enabled", a.communication_enabled.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(HarnessError::Spec(format!("axis `{name}` is empty")));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(HarnessError::Spec("seeds must be distinct".into()));
        }
        for cfg in self.points() {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Every (axis combination, seed) config, seeds innermost.
    pub fn points(&self) -> Vec<WorldConfig> {
        let a = &self.axes;
        let mut out = Vec::new();
        for &n in &a.n_bodyguards {
            for &reward in &a.reward_kind {
                for &learner in &a.learner_kind {
                    for &comm in &a.communication_enabled {
                        for &seed in &self.seeds {
                            out.push(WorldConfig {
                                n_bodyguards: n,
                                reward_kind: reward,
                                learner_kind: learner,
                                communication_enabled: comm,
                                seed,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Trains every point on `jobs` worker threads, writing each run under
/// `output_dir/runs/<run>/` and the report under `output_dir/report/`.
/// Each run owns its streams, so results do not depend on `jobs`.
pub fn run_sweep(spec: &ExperimentSpec, jobs: usize) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let runs_dir = spec.output_dir.join("runs");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Spec(format!("cannot start {jobs} workers: {e}")))?;
    let results = pool.install(|| {
        spec.points()
            .par_iter()
            .map(|cfg| {
                let id = RunIdentity::of(cfg);
                let dir = runs_dir.join(id.slug());
                run_training_to_dir(cfg, &dir).map(|run| (id, dir, run.log))
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut aborted = Vec::new();
    for (id, dir, log) in results {
        records.extend(log.evaluations);
        if let Some(a) = log.abort {
            aborted.push((id.clone(), a));
        }
        runs.push((id, dir));
    }
    let report = emit_report(&records, &spec.output_dir.join("report"))?;
    Ok(SweepOutcome { runs, aborted, report })
}
