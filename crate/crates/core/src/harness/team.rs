use crate::env::{observation_len, observe, one_hot, silence, AgentAction, WorldState};
use crate::learner::{
    ddpg_update, maddpg_update_shared, select_action, ActionSpec, AgentLearner, LearnerError, Transition,
    UpdateParams, UpdateStats,
};
use crate::model::{LearnerKind, Vec2, WorldConfig};
use crate::rng::RngStream;

use super::HarnessError;

/// The bodyguard team: one learner per agent, or a single shared learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub kind: LearnerKind,
    pub spec: ActionSpec,
    pub learners: Vec<AgentLearner>,
    /// `owners[i]` is the learner that acts for agent `i`.
    pub owners: Vec<usize>,
    comm_vocab: usize,
}

/// Observations and chosen actions of every agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamActions {
    pub observations: Vec<Vec<f64>>,
    /// Actions in environment form.
    pub env: Vec<AgentAction>,
    /// Flat action vectors as stored in the replay buffer.
    pub vectors: Vec<Vec<f64>>,
}

/// Action layout for a config. With the channel disabled the actor has no
/// utterance head and the team is always silent.
pub fn action_spec(cfg: &WorldConfig) -> ActionSpec {
    ActionSpec {
        force_dims: 2,
        vocab: if cfg.communication_enabled { cfg.comm_vocab } else { 0 },
        max_force: cfg.max_force,
    }
}

pub fn critic_input_len(cfg: &WorldConfig) -> usize {
    let width = action_spec(cfg).width();
    observation_len(cfg)
        + match cfg.learner_kind {
            LearnerKind::Ddpg => width,
            LearnerKind::Maddpg => cfg.n_bodyguards * width,
        }
}

impl Team {
    pub fn new(cfg: &WorldConfig, rng: &mut RngStream) -> Self {
        let spec = action_spec(cfg);
        let n_learners = if cfg.shared_params { 1 } else { cfg.n_bodyguards };
        let learners = (0..n_learners)
            .map(|_| {
                AgentLearner::new(
                    observation_len(cfg),
                    critic_input_len(cfg),
                    spec,
                    &cfg.hidden_sizes,
                    cfg.actor_lr,
                    cfg.critic_lr,
                    rng,
                )
            })
            .collect();
        Self::from_learners(cfg, learners).expect("freshly built learners fit the config")
    }

    /// Wraps existing learners, checking they fit the config.
    pub fn from_learners(cfg: &WorldConfig, learners: Vec<AgentLearner>) -> Result<Self, HarnessError> {
        let expected = if cfg.shared_params { 1 } else { cfg.n_bodyguards };
        let spec = action_spec(cfg);
        let fits = |l: &AgentLearner| {
            l.spec == spec
                && l.actor.input_len() == observation_len(cfg)
                && l.critic.input_len() == critic_input_len(cfg)
                && l.target_actor.sizes() == l.actor.sizes()
                && l.target_critic.sizes() == l.critic.sizes()
        };
        if learners.len() != expected || !learners.iter().all(fits) {
            return Err(HarnessError::Learner(LearnerError::ShapeMismatch(format!(
                "expected {expected} learners matching the config"
            ))));
        }
        let owners = if cfg.shared_params { vec![0; cfg.n_bodyguards] } else { (0..cfg.n_bodyguards).collect() };
        Ok(Team { kind: cfg.learner_kind, spec, learners, owners, comm_vocab: cfg.comm_vocab })
    }

    pub fn n_agents(&self) -> usize {
        self.owners.len()
    }

    pub fn learner_for(&self, agent: usize) -> &AgentLearner {
        &self.learners[self.owners[agent]]
    }

    /// Chooses every agent's action. `sigma = epsilon = 0` is the greedy policy.
    pub fn act(
        &self,
        world: &WorldState,
        cfg: &WorldConfig,
        sigma: f64,
        epsilon: f64,
        rng: &mut RngStream,
    ) -> Result<TeamActions, HarnessError> {
        let mut out = TeamActions { observations: Vec::new(), env: Vec::new(), vectors: Vec::new() };
        for i in 0..self.n_agents() {
            let obs = observe(world, i, cfg)?;
            let a = select_action(self.learner_for(i), &obs, sigma, epsilon, rng)?;
            let utterance =
                if self.spec.vocab > 0 { one_hot(a.utterance, self.comm_vocab) } else { silence(self.comm_vocab) };
            out.env.push(AgentAction { force: Vec2::new(a.force[0], a.force[1]), utterance });
            out.vectors.push(a.vector);
            out.observations.push(obs);
        }
        Ok(out)
    }

    /// One gradient update of every learner from a sampled batch.
    pub fn update(&mut self, batch: &[&Transition], params: &UpdateParams) -> Result<Vec<UpdateStats>, LearnerError> {
        match self.kind {
            LearnerKind::Ddpg => (0..self.n_agents())
                .map(|i| ddpg_update(&mut self.learners[self.owners[i]], batch, i, params))
                .collect(),
            LearnerKind::Maddpg => maddpg_update_shared(&mut self.learners, &self.owners, batch, params),
        }
    }
}
