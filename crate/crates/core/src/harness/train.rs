use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::env::{observe, reset, step, WorldState};
use crate::fmt::sig9;
use crate::learner::{LearnerError, ReplayBuffer, Transition, UpdateParams};
use crate::model::WorldConfig;
use crate::nn::NnError;
use crate::rewards::team_rewards;
use crate::rng::{derive_stream, RngStream};
use crate::threat::{instantaneous_threat, integrate};

use super::checkpoint::save_checkpoint;
use super::report::write_records_csv;
use super::{create_dir, EvalRecord, HarnessError, RunIdentity, Team};

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// 1-based count of completed training episodes.
    pub episode: usize,
    pub total_threat: f64,
    pub mean_reward: f64,
    pub utterance_rate: f64,
    /// Gradient updates performed during the episode.
    pub updates: usize,
    /// Mean critic loss over those updates and agents (0 without updates).
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Why and when a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingAbort {
    /// The training episode (1-based) during which the failure happened.
    pub episode: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub run: RunIdentity,
    pub config_hash: String,
    pub episodes: Vec<EpisodeLog>,
    pub evaluations: Vec<EvalRecord>,
    pub abort: Option<TrainingAbort>,
}

impl TrainingLog {
    /// Mean total threat of the evaluation held after `episode` training episodes.
    pub fn eval_mean(&self, episode: usize) -> Option<f64> {
        let v: Vec<f64> =
            self.evaluations.iter().filter(|r| r.episode_index == episode).map(|r| r.total_threat).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Training episode of the last evaluation.
    pub fn last_eval_episode(&self) -> Option<usize> {
        self.evaluations.last().map(|r| r.episode_index)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub team: Team,
    pub log: TrainingLog,
}

struct EpisodeOutcome {
    total_threat: f64,
    mean_reward: f64,
    utterance_rate: f64,
}

/// An episode in progress; the team is borrowed only while a step is taken,
/// so it can be updated between steps.
struct Episode {
    world: WorldState,
    instantaneous: Vec<f64>,
    reward_sum: f64,
    spoken: usize,
    agent_steps: usize,
}

impl Episode {
    fn start(cfg: &WorldConfig, env_rng: &mut RngStream) -> Result<Self, HarnessError> {
        Ok(Episode {
            world: reset(cfg, env_rng)?,
            instantaneous: Vec::with_capacity(cfg.episode_length),
            reward_sum: 0.0,
            spoken: 0,
            agent_steps: 0,
        })
    }

    /// Takes one joint step. Returns the transition when `record` is set and
    /// whether the episode has finished.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        team: &Team,
        cfg: &WorldConfig,
        sigma: f64,
        epsilon: f64,
        env_rng: &mut RngStream,
        noise_rng: &mut RngStream,
        record: bool,
    ) -> Result<(Option<Transition>, bool), HarnessError> {
        let n = cfg.n_bodyguards;
        self.instantaneous.push(instantaneous_threat(&self.world, &cfg.threat_params()).instantaneous);
        let acts = team.act(&self.world, cfg, sigma, epsilon, noise_rng)?;
        let (next, done) = step(&self.world, &acts.env, cfg, env_rng)?;
        let rewards = team_rewards(cfg, &next, &acts.env);
        self.reward_sum += rewards.iter().sum::<f64>() / n as f64;
        self.spoken += acts.env.iter().filter(|a| a.speaks()).count();
        self.agent_steps += n;
        let transition = if record {
            let next_observations = (0..n).map(|i| observe(&next, i, cfg)).collect::<Result<_, _>>()?;
            Some(Transition { observations: acts.observations, actions: acts.vectors, rewards, next_observations, done })
        } else {
            None
        };
        self.world = next;
        Ok((transition, done))
    }

    fn finish(self, cfg: &WorldConfig) -> EpisodeOutcome {
        EpisodeOutcome {
            total_threat: integrate(self.instantaneous, cfg.dt),
            mean_reward: self.reward_sum,
            utterance_rate: self.spoken as f64 / self.agent_steps.max(1) as f64,
        }
    }
}

/// Greedy (noise-free) evaluation over `episodes` fresh episodes. The
/// episodes depend only on `seed`, so repeated calls score the same worlds.
pub fn evaluate(team: &Team, cfg: &WorldConfig, episodes: usize, seed: u64) -> Result<Vec<EvalRecord>, HarnessError> {
    let mut env_rng = derive_stream(seed, "eval/env");
    let mut unused = derive_stream(seed, "eval/noise");
    let run = RunIdentity { seed, ..RunIdentity::of(cfg) };
    (0..episodes)
        .map(|k| {
            let mut ep = Episode::start(cfg, &mut env_rng)?;
            while !ep.advance(team, cfg, 0.0, 0.0, &mut env_rng, &mut unused, false)?.1 {}
            let out = ep.finish(cfg);
            Ok(EvalRecord {
                run: run.clone(),
                episode_index: 0,
                eval_episode: k,
                total_threat: out.total_threat,
                mean_reward: out.mean_reward,
                utterance_rate: out.utterance_rate,
            })
        })
        .collect()
}

fn is_non_finite(e: &HarnessError) -> bool {
    matches!(
        e,
        HarnessError::Learner(LearnerError::NonFiniteLoss { .. })
            | HarnessError::Learner(LearnerError::Nn(NnError::NonFiniteGradient))
            | HarnessError::Nn(NnError::NonFiniteGradient)
    )
}

fn evaluate_at(team: &Team, cfg: &WorldConfig, episode: usize) -> Result<Vec<EvalRecord>, HarnessError> {
    let mut records = evaluate(team, cfg, cfg.eval_episodes, cfg.seed)?;
    records.iter_mut().for_each(|r| r.episode_index = episode);
    Ok(records)
}

/// Trains a team from scratch. `on_checkpoint(team, episode)` is called
/// every `checkpoint_interval` episodes and once at the end.
pub fn run_training_with(
    cfg: &WorldConfig,
    on_checkpoint: &mut dyn FnMut(&Team, usize) -> Result<(), HarnessError>,
) -> Result<TrainingRun, HarnessError> {
    let cfg = cfg.clone().validate()?;
    let seed = cfg.seed;
    let mut team = Team::new(&cfg, &mut derive_stream(seed, "init"));
    let mut env_rng = derive_stream(seed, "train/env");
    let mut noise_rng = derive_stream(seed, "train/noise");
    let mut replay_rng = derive_stream(seed, "train/replay");
    let obs_dim = team.learner_for(0).obs_dim();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, cfg.n_bodyguards, obs_dim, team.spec.width());
    let params = UpdateParams { gamma: cfg.gamma, tau: cfg.tau, grad_clip_norm: cfg.grad_clip_norm };
    let sigma = cfg.exploration_sigma * cfg.max_force;
    let warmup = cfg.warmup_transitions().max(cfg.batch_size);

    let mut log = TrainingLog {
        run: RunIdentity::of(&cfg),
        config_hash: cfg.hash(),
        episodes: Vec::with_capacity(cfg.train_episodes),
        evaluations: evaluate_at(&team, &cfg, 0)?,
        abort: None,
    };
    let mut steps = 0usize;
    let mut last_checkpoint = None;
    for episode in 1..=cfg.train_episodes {
        let mut updates = 0usize;
        let mut critic_loss = 0.0;
        let mut actor_objective = 0.0;
        let mut ep = Episode::start(&cfg, &mut env_rng)?;
        let result = (|| -> Result<(), HarnessError> {
            loop {
                let (t, done) =
                    ep.advance(&team, &cfg, sigma, cfg.utterance_epsilon, &mut env_rng, &mut noise_rng, true)?;
                buffer.push(t.expect("recorded"))?;
                steps += 1;
                if buffer.len() >= warmup && steps.is_multiple_of(cfg.update_every) {
                    let batch = buffer.sample(cfg.batch_size, &mut replay_rng)?;
                    for s in team.update(&batch, &params)? {
                        critic_loss += s.critic_loss;
                        actor_objective += s.actor_objective;
                    }
                    updates += 1;
                }
                if done {
                    return Ok(());
                }
            }
        })();
        if let Err(e) = result {
            if is_non_finite(&e) {
                log.abort = Some(TrainingAbort { episode, reason: e.to_string() });
                tracing::warn!(episode, error = %e, "training aborted");
                break;
            }
            return Err(e);
        }
        let out = ep.finish(&cfg);
        let per_update = (updates * team.n_agents()).max(1) as f64;
        log.episodes.push(EpisodeLog {
            episode,
            total_threat: out.total_threat,
            mean_reward: out.mean_reward,
            utterance_rate: out.utterance_rate,
            updates,
            critic_loss: critic_loss / per_update,
            actor_objective: actor_objective / per_update,
        });
        if episode % cfg.eval_interval == 0 || episode == cfg.train_episodes {
            let records = evaluate_at(&team, &cfg, episode)?;
            info!(
                run = %log.run.slug(),
                episode,
                eval_threat = records.iter().map(|r| r.total_threat).sum::<f64>() / records.len().max(1) as f64,
                "evaluation"
            );
            log.evaluations.extend(records);
        }
        if episode % cfg.checkpoint_interval == 0 || episode == cfg.train_episodes {
            on_checkpoint(&team, episode)?;
            last_checkpoint = Some(episode);
        }
    }
    let completed = log.episodes.len();
    if last_checkpoint != Some(completed) {
        on_checkpoint(&team, completed)?;
    }
    Ok(TrainingRun { team, log })
}

/// Trains without writing anything to disk.
pub fn run_training(cfg: &WorldConfig) -> Result<TrainingRun, HarnessError> {
    run_training_with(cfg, &mut |_, _| Ok(()))
}

/// Trains and writes the run directory:
///
/// * `config.toml`: the validated config
/// * `training.csv`: one row per training episode
/// * `records.csv`: every evaluation episode
/// * `checkpoints/episode_NNNNNN/`: periodic checkpoints
/// * `checkpoint/`: the most recent (after the run: final) checkpoint
/// * `abort.json`: present only when training stopped on a non-finite loss
pub fn run_training_to_dir(cfg: &WorldConfig, dir: &Path) -> Result<TrainingRun, HarnessError> {
    let cfg = cfg.clone().validate()?;
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let run = run_training_with(&cfg, &mut |team, episode| {
        if episode > 0 && episode % cfg.checkpoint_interval == 0 {
            save_checkpoint(team, &cfg, episode, &dir.join("checkpoints").join(format!("episode_{episode:06}")))?;
        }
        // Always the latest; after the last call it is the final checkpoint.
        save_checkpoint(team, &cfg, episode, &dir.join("checkpoint"))
    })?;
    write_training_csv(&dir.join("training.csv"), &run.log.episodes)?;
    write_records_csv(&dir.join("records.csv"), &run.log.evaluations)?;
    if let Some(abort) = &run.log.abort {
        let json = serde_json::to_string_pretty(abort).expect("abort info serializes");
        write_file(&dir.join("abort.json"), json.as_bytes())?;
    }
    Ok(run)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn write_training_csv(path: &Path, episodes: &[EpisodeLog]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    w.write_record([
        "episode",
        "total_threat",
        "mean_reward",
        "utterance_rate",
        "updates",
        "critic_loss",
        "actor_objective",
    ])
    .map_err(|e| HarnessError::csv(path, e))?;
    for e in episodes {
        w.write_record([
            e.episode.to_string(),
            sig9(e.total_threat),
            sig9(e.mean_reward),
            sig9(e.utterance_rate),
            e.updates.to_string(),
            sig9(e.critic_loss),
            sig9(e.actor_objective),
        ])
        .map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
