//! Request/response types of the HTTP service and the blocking operations
//! behind each endpoint. Transport-free, so the server stays a thin router and
//! the client shares the exact wire types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, WorldState};
use crate::harness::{
    compare_rewards, emit_report, evaluate, load_checkpoint, mean_std, read_records_dir, run_sweep, run_training_to_dir,
    summarize, ComparisonRow, EvalRecord, ExperimentSpec, HarnessError, ReportFiles, RunIdentity, TrainingAbort,
};
use crate::model::{RewardKind, WorldConfig};
use crate::rewards::{breakdown, RewardBreakdown, RewardParams};
use crate::threat::{instantaneous_threat, total_threat, ThreatParams, ThreatReport};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// Short machine-readable class, e.g. `config`, `io`, `non_finite_loss`.
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { kind: kind.into(), message: message.into() }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        ApiError::new(e.kind(), e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

impl Health {
    pub fn ok() -> Self {
        Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

/// A config given as TOML text (empty = defaults) plus `key=value` overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSource {
    #[serde(default)]
    pub toml: String,
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl ConfigSource {
    pub fn resolve(&self) -> Result<WorldConfig, HarnessError> {
        let base = WorldConfig::from_toml(&self.toml)?;
        Ok(base.with_overrides(&self.overrides)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: WorldConfig,
    pub hash: String,
}

pub fn resolve_config(source: &ConfigSource) -> Result<ResolvedConfig, ApiError> {
    let config = source.resolve()?;
    Ok(ResolvedConfig { hash: config.hash(), config })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatRequest {
    pub world: WorldState,
    pub params: ThreatParams,
}

pub fn threat(req: &ThreatRequest) -> Result<ThreatReport, ApiError> {
    check_params(&req.params)?;
    check_world(&req.world)?;
    Ok(instantaneous_threat(&req.world, &req.params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalThreatRequest {
    pub trajectory: Vec<WorldState>,
    pub params: ThreatParams,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalThreatResponse {
    pub total_threat: f64,
}

pub fn total_threat_of(req: &TotalThreatRequest) -> Result<TotalThreatResponse, ApiError> {
    check_params(&req.params)?;
    if !(req.dt.is_finite() && req.dt > 0.0) {
        return Err(ApiError::new("invalid_request", "dt must be positive"));
    }
    req.trajectory.iter().try_for_each(check_world)?;
    let total = total_threat(&req.trajectory, &req.params, req.dt)
        .map_err(|e| ApiError::new("invalid_request", e.to_string()))?;
    Ok(TotalThreatResponse { total_threat: total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardsRequest {
    pub kind: RewardKind,
    pub params: RewardParams,
    pub world: WorldState,
    /// One action per bodyguard, in world order.
    pub actions: Vec<AgentAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardsResponse {
    pub per_agent: Vec<RewardBreakdown>,
}

pub fn rewards(req: &RewardsRequest) -> Result<RewardsResponse, ApiError> {
    check_params(&req.params.threat)?;
    check_world(&req.world)?;
    let n = req.world.n_bodyguards();
    if req.actions.len() != n {
        return Err(ApiError::new("invalid_request", format!("{} actions for {n} bodyguards", req.actions.len())));
    }
    let per_agent =
        req.actions.iter().enumerate().map(|(i, a)| breakdown(req.kind, &req.world, i, a, &req.params)).collect();
    Ok(RewardsResponse { per_agent })
}

fn check_params(p: &ThreatParams) -> Result<(), ApiError> {
    let ok = [p.a, p.b, p.safe_distance].iter().all(|v| v.is_finite() && *v > 0.0);
    if ok {
        Ok(())
    } else {
        Err(ApiError::new("invalid_request", "threat parameters must be positive and finite"))
    }
}

fn check_world(w: &WorldState) -> Result<(), ApiError> {
    let vips = w.entities.iter().filter(|e| e.kind == crate::model::EntityKind::Vip).count();
    if vips != 1 || w.entities.first().map(|e| e.kind) != Some(crate::model::EntityKind::Vip) {
        return Err(ApiError::new("invalid_request", "world must start with exactly one VIP"));
    }
    let finite = w.entities.iter().all(|e| e.position.is_finite() && e.velocity.is_finite() && e.radius > 0.0);
    if !finite {
        return Err(ApiError::new("invalid_request", "entity positions must be finite and radii positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: ConfigSource,
    /// Run directory; created if missing.
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub run: RunIdentity,
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub episodes_completed: usize,
    /// Mean total threat of the untrained policy (evaluation at episode 0).
    pub baseline_total_threat: Option<f64>,
    /// Mean total threat at the last evaluation.
    pub final_total_threat: Option<f64>,
    pub final_eval_episode: usize,
    pub abort: Option<TrainingAbort>,
}

pub fn train(req: &TrainRequest) -> Result<TrainResponse, ApiError> {
    let cfg = req.config.resolve()?;
    let run = run_training_to_dir(&cfg, &req.out_dir)?;
    let log = run.log;
    let last = log.last_eval_episode().unwrap_or(0);
    Ok(TrainResponse {
        run: log.run.clone(),
        config_hash: log.config_hash.clone(),
        out_dir: req.out_dir.clone(),
        episodes_completed: log.episodes.len(),
        baseline_total_threat: log.eval_mean(0),
        final_total_threat: log.eval_mean(last),
        final_eval_episode: last,
        abort: log.abort,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    /// Evaluation seed; defaults to the checkpoint config's seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub run: RunIdentity,
    /// Training episodes behind the checkpoint.
    pub trained_episodes: usize,
    pub mean_total_threat: f64,
    pub std_total_threat: f64,
    pub mean_reward: f64,
    pub utterance_rate: f64,
    pub records: Vec<EvalRecord>,
}

pub fn eval(req: &EvalRequest) -> Result<EvalResponse, ApiError> {
    if req.episodes == 0 {
        return Err(ApiError::new("invalid_request", "episodes must be >= 1"));
    }
    let (cfg, team, manifest) = load_checkpoint(&req.checkpoint)?;
    let seed = req.seed.unwrap_or(cfg.seed);
    let mut records = evaluate(&team, &cfg, req.episodes, seed)?;
    records.iter_mut().for_each(|r| r.episode_index = manifest.episodes);
    let threat: Vec<f64> = records.iter().map(|r| r.total_threat).collect();
    let (mean, std) = mean_std(&threat);
    let avg = |f: fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
    Ok(EvalResponse {
        run: records[0].run.clone(),
        trained_episodes: manifest.episodes,
        mean_total_threat: mean,
        std_total_threat: std,
        mean_reward: avg(|r| r.mean_reward),
        utterance_rate: avg(|r| r.utterance_rate),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    /// Experiment spec as TOML text.
    pub spec: String,
    pub jobs: usize,
    /// Replaces the spec's `output_dir` (used to resolve relative paths).
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub runs: Vec<(RunIdentity, PathBuf)>,
    pub aborted: Vec<(RunIdentity, TrainingAbort)>,
    pub report: ReportFiles,
    pub comparison: Vec<ComparisonRow>,
}

pub fn sweep(req: &SweepRequest) -> Result<SweepResponse, ApiError> {
    if req.jobs == 0 {
        return Err(ApiError::new("invalid_request", "jobs must be >= 1"));
    }
    let mut spec = ExperimentSpec::from_toml(&req.spec)?;
    if let Some(dir) = &req.output_dir {
        spec.output_dir = dir.clone();
    }
    let outcome = run_sweep(&spec, req.jobs)?;
    let comparison = comparison_of(&outcome.report.raw)?;
    Ok(SweepResponse { runs: outcome.runs, aborted: outcome.aborted, report: outcome.report, comparison })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    /// Directory searched recursively for `records.csv` files.
    pub in_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub records: usize,
    pub files: ReportFiles,
    pub comparison: Vec<ComparisonRow>,
}

pub fn report(req: &ReportRequest) -> Result<ReportResponse, ApiError> {
    if !req.in_dir.is_dir() {
        return Err(ApiError::new("io", format!("{} is not a directory", req.in_dir.display())));
    }
    let records = read_records_dir(&req.in_dir)?;
    let files = emit_report(&records, &req.out_dir)?;
    let comparison = comparison_of(&files.raw)?;
    Ok(ReportResponse { records: records.len(), files, comparison })
}

/// Comparison computed from the raw CSV as written, like the report files.
fn comparison_of(raw: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    let records = crate::harness::read_records_csv(raw)?;
    Ok(compare_rewards(&summarize(&records)))
}
