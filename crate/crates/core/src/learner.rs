//! Replay buffer, exploration and the DDPG / MADDPG updates.
//!
//! An action vector is `[force / max_force, utterance one-hot]`. Actors output
//! tanh force components followed by a softmax over the vocabulary. Executed
//! and critic-facing actions use the argmax one-hot; the actor update pushes
//! the critic's gradient with respect to that one-hot straight into the
//! softmax probabilities.
//!
//! DDPG critics see `[own observation, own action]`. MADDPG critics see
//! `[own observation, actions of all agents]`, and each actor differentiates
//! its critic only through its own action slot.

use std::collections::VecDeque;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{soft_update, Adam, Gradients, Mlp, NnError, OutputActivation};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need {needed} transitions, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("non-finite {which} loss")]
    NonFiniteLoss { which: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One joint step of experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
    pub done: bool,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
    n_agents: usize,
    obs_dim: usize,
    action_dim: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_agents: usize, obs_dim: usize, action_dim: usize) -> Self {
        ReplayBuffer { items: VecDeque::new(), capacity: capacity.max(1), inserted: 0, n_agents, obs_dim, action_dim }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including evicted transitions.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), LearnerError> {
        let n = self.n_agents;
        let lists_ok = t.observations.len() == n
            && t.actions.len() == n
            && t.rewards.len() == n
            && t.next_observations.len() == n;
        let widths_ok = t.observations.iter().chain(&t.next_observations).all(|o| o.len() == self.obs_dim)
            && t.actions.iter().all(|a| a.len() == self.action_dim);
        if !lists_ok || !widths_ok {
            return Err(LearnerError::ShapeMismatch(format!(
                "transition does not fit {n} agents x (obs {}, action {})",
                self.obs_dim, self.action_dim
            )));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        Ok(())
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut RngStream) -> Result<Vec<&Transition>, LearnerError> {
        if self.items.len() < batch_size || self.items.is_empty() {
            return Err(LearnerError::InsufficientData { needed: batch_size.max(1), available: self.items.len() });
        }
        Ok((0..batch_size).map(|_| &self.items[rng.index(self.items.len())]).collect())
    }
}

/// Layout of one agent's action vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub force_dims: usize,
    /// Utterance vocabulary size; 0 disables the utterance head.
    pub vocab: usize,
    pub max_force: f64,
}

impl ActionSpec {
    pub fn width(&self) -> usize {
        self.force_dims + self.vocab
    }

    fn actor_head(&self) -> OutputActivation {
        if self.vocab == 0 {
            OutputActivation::Tanh
        } else {
            OutputActivation::TanhSoftmax { tanh_dims: self.force_dims }
        }
    }
}

/// Hyper-parameters of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateParams {
    pub gamma: f64,
    pub tau: f64,
    pub grad_clip_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean critic value of the current policy's actions.
    pub actor_objective: f64,
}

/// Online and target networks of one agent plus their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLearner {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub spec: ActionSpec,
}

impl AgentLearner {
    /// Targets start as exact copies of the online networks.
    pub fn new(
        obs_dim: usize,
        critic_input_dim: usize,
        spec: ActionSpec,
        hidden: &[usize],
        actor_lr: f64,
        critic_lr: f64,
        rng: &mut RngStream,
    ) -> Self {
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(output);
            v
        };
        let actor = Mlp::new(&sizes(obs_dim, spec.width()), spec.actor_head(), rng);
        let critic = Mlp::new(&sizes(critic_input_dim, 1), OutputActivation::Identity, rng);
        AgentLearner {
            actor_opt: Adam::new(&actor, actor_lr),
            critic_opt: Adam::new(&critic, critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            spec,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_len()
    }
}

/// An action chosen by [`select_action`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAction {
    /// Executed force, `|force| <= max_force`.
    pub force: Vec<f64>,
    /// Force before norm clipping (greedy force plus exploration noise).
    pub raw_force: Vec<f64>,
    pub utterance: usize,
    /// `[force / max_force, one-hot utterance]`, as stored in the replay buffer.
    pub vector: Vec<f64>,
}

fn clip_unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Actor action plus Gaussian force noise of std `sigma` (force units) and,
/// with probability `epsilon`, a uniformly random utterance. With
/// `sigma = epsilon = 0` this is the deterministic greedy policy.
pub fn select_action(
    learner: &AgentLearner,
    obs: &[f64],
    sigma: f64,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<PolicyAction, LearnerError> {
    let spec = learner.spec;
    let out = learner.actor.forward(obs)?;
    let raw_force: Vec<f64> = out[..spec.force_dims]
        .iter()
        .map(|&t| {
            let greedy = t * spec.max_force;
            if sigma > 0.0 {
                greedy + rng.normal(0.0, sigma)
            } else {
                greedy
            }
        })
        .collect();
    let mut unit: Vec<f64> = raw_force.iter().map(|f| f / spec.max_force).collect();
    clip_unit(&mut unit);
    let force = unit.iter().map(|u| u * spec.max_force).collect();

    let mut utterance = 0;
    let mut vector = unit;
    if spec.vocab > 0 {
        utterance = crate::env::argmax(&out[spec.force_dims..]);
        if epsilon > 0.0 && rng.bernoulli(epsilon) {
            utterance = rng.index(spec.vocab);
        }
        vector.extend((0..spec.vocab).map(|k| if k == utterance { 1.0 } else { 0.0 }));
    }
    Ok(PolicyAction { force, raw_force, utterance, vector })
}

/// Critic-facing actions for a batch of actor outputs: norm-clipped force and
/// argmax one-hot utterance.
fn executed_actions(spec: &ActionSpec, out: &Array2<f64>) -> Array2<f64> {
    let mut a = out.clone();
    for mut row in a.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        clip_unit(&mut row[..spec.force_dims]);
        if spec.vocab > 0 {
            let probs = &mut row[spec.force_dims..];
            let k = crate::env::argmax(probs);
            probs.iter_mut().enumerate().for_each(|(i, p)| *p = if i == k { 1.0 } else { 0.0 });
        }
    }
    a
}

/// Backpropagates `d/d(executed action)` to `d/d(actor output)`: through the
/// norm clip for the force and straight through the one-hot for the utterance.
fn actions_to_output_grad(spec: &ActionSpec, out: &Array2<f64>, action_grad: ArrayView2<f64>) -> Array2<f64> {
    let mut g = action_grad.to_owned();
    for (mut grow, orow) in g.rows_mut().into_iter().zip(out.rows()) {
        let t = orow.slice(s![..spec.force_dims]);
        let n = t.dot(&t).sqrt();
        if n > 1.0 {
            let mut gf = grow.slice_mut(s![..spec.force_dims]);
            let y = &t / n;
            let along = gf.dot(&y);
            gf.zip_mut_with(&y, |gi, &yi| *gi = (*gi - yi * along) / n);
        }
    }
    g
}

struct Batch {
    obs: Vec<Array2<f64>>,
    next_obs: Vec<Array2<f64>>,
    actions: Vec<Array2<f64>>,
    rewards: Vec<Array2<f64>>,
    not_done: Array2<f64>,
}

fn rows(items: &[&Transition], f: impl Fn(&Transition) -> &[f64]) -> Array2<f64> {
    let width = f(items[0]).len();
    let mut data = Vec::with_capacity(items.len() * width);
    for t in items {
        data.extend_from_slice(f(t));
    }
    Array2::from_shape_vec((items.len(), width), data).expect("uniform widths")
}

impl Batch {
    fn new(items: &[&Transition], n_agents: usize) -> Result<Self, LearnerError> {
        if items.is_empty() {
            return Err(LearnerError::InsufficientData { needed: 1, available: 0 });
        }
        if items.iter().any(|t| t.observations.len() != n_agents || t.actions.len() != n_agents) {
            return Err(LearnerError::ShapeMismatch(format!("batch transitions must hold {n_agents} agents")));
        }
        let per_agent = |f: &dyn Fn(&Transition, usize) -> &[f64]| -> Vec<Array2<f64>> {
            (0..n_agents).map(|i| rows(items, |t| f(t, i))).collect()
        };
        let rewards = (0..n_agents)
            .map(|i| Array2::from_shape_fn((items.len(), 1), |(b, _)| items[b].rewards[i]))
            .collect();
        Ok(Batch {
            obs: per_agent(&|t, i| &t.observations[i]),
            next_obs: per_agent(&|t, i| &t.next_observations[i]),
            actions: per_agent(&|t, i| &t.actions[i]),
            rewards,
            not_done: Array2::from_shape_fn((items.len(), 1), |(b, _)| if items[b].done { 0.0 } else { 1.0 }),
        })
    }
}

fn hcat(parts: &[ArrayView2<f64>]) -> Array2<f64> {
    concatenate(Axis(1), parts).expect("equal batch sizes")
}

fn clipped(mut g: Gradients, max_norm: f64) -> Gradients {
    g.clip_global_norm(max_norm);
    g
}

/// Critic then actor update for one learner.
///
/// `joint` and `next_joint` are the action blocks the critic sees (one block
/// for DDPG, one per agent for MADDPG); `slot` is this agent's block.
#[allow(clippy::too_many_arguments)]
fn update_one(
    learner: &mut AgentLearner,
    obs: &Array2<f64>,
    next_obs: &Array2<f64>,
    joint: &[Array2<f64>],
    next_joint: &[Array2<f64>],
    slot: usize,
    rewards: &Array2<f64>,
    not_done: &Array2<f64>,
    params: &UpdateParams,
) -> Result<UpdateStats, LearnerError> {
    let batch = obs.nrows() as f64;
    let spec = learner.spec;

    // Critic regression toward r + gamma * (1 - done) * Q'(s', a').
    let mut next_in: Vec<ArrayView2<f64>> = vec![next_obs.view()];
    next_in.extend(next_joint.iter().map(|a| a.view()));
    let next_q = learner.target_critic.forward_batch(hcat(&next_in).view())?;
    let target = rewards + &(next_q * not_done * params.gamma);

    let mut critic_in: Vec<ArrayView2<f64>> = vec![obs.view()];
    critic_in.extend(joint.iter().map(|a| a.view()));
    let critic_in = hcat(&critic_in);
    let cache = learner.critic.forward_cached(critic_in.view())?;
    let err = cache.output() - &target;
    let critic_loss = err.mapv(|e| e * e).sum() / batch;
    if !critic_loss.is_finite() {
        return Err(LearnerError::NonFiniteLoss { which: "critic" });
    }
    let (grads, _) = learner.critic.backward_cached(&cache, (err * (2.0 / batch)).view())?;
    learner.critic_opt.apply(&mut learner.critic, &clipped(grads, params.grad_clip_norm))?;

    // Actor ascent on Q(s, ..., pi(s), ...).
    let actor_cache = learner.actor.forward_cached(obs.view())?;
    let own = executed_actions(&spec, actor_cache.output());
    let mut actor_in: Vec<ArrayView2<f64>> = vec![obs.view()];
    for (k, a) in joint.iter().enumerate() {
        actor_in.push(if k == slot { own.view() } else { a.view() });
    }
    let actor_in = hcat(&actor_in);
    let q_cache = learner.critic.forward_cached(actor_in.view())?;
    let actor_objective = q_cache.output().sum() / batch;
    if !actor_objective.is_finite() {
        return Err(LearnerError::NonFiniteLoss { which: "actor" });
    }
    let dq = Array2::from_elem((obs.nrows(), 1), -1.0 / batch);
    let d_in = learner.critic.input_grad_cached(&q_cache, dq.view())?;
    let start = obs.ncols() + slot * spec.width();
    let d_action = d_in.slice(s![.., start..start + spec.width()]);
    let d_out = actions_to_output_grad(&spec, actor_cache.output(), d_action);
    let (actor_grads, _) = learner.actor.backward_cached(&actor_cache, d_out.view())?;
    learner.actor_opt.apply(&mut learner.actor, &clipped(actor_grads, params.grad_clip_norm))?;

    soft_update(&mut learner.target_actor, &learner.actor, params.tau)?;
    soft_update(&mut learner.target_critic, &learner.critic, params.tau)?;
    Ok(UpdateStats { critic_loss, actor_objective })
}

/// Decentralized update of agent `agent_index` from its own observations and actions.
pub fn ddpg_update(
    learner: &mut AgentLearner,
    batch: &[&Transition],
    agent_index: usize,
    params: &UpdateParams,
) -> Result<UpdateStats, LearnerError> {
    let n_agents = batch.first().map_or(0, |t| t.observations.len());
    if agent_index >= n_agents.max(1) {
        return Err(LearnerError::ShapeMismatch(format!("agent {agent_index} not in batch of {n_agents} agents")));
    }
    let b = Batch::new(batch, n_agents)?;
    let next = executed_actions(&learner.spec, &learner.target_actor.forward_batch(b.next_obs[agent_index].view())?);
    update_one(
        learner,
        &b.obs[agent_index],
        &b.next_obs[agent_index],
        std::slice::from_ref(&b.actions[agent_index]),
        std::slice::from_ref(&next),
        0,
        &b.rewards[agent_index],
        &b.not_done,
        params,
    )
}

/// Centralized-critic update of every agent. `owners[i]` names the learner
/// that acts for agent `i` (all zeros for a shared parameter set).
pub fn maddpg_update_shared(
    learners: &mut [AgentLearner],
    owners: &[usize],
    batch: &[&Transition],
    params: &UpdateParams,
) -> Result<Vec<UpdateStats>, LearnerError> {
    let n_agents = owners.len();
    if owners.iter().any(|&o| o >= learners.len()) {
        return Err(LearnerError::ShapeMismatch("agent owner out of range".into()));
    }
    let b = Batch::new(batch, n_agents)?;
    let next_joint: Vec<Array2<f64>> = (0..n_agents)
        .map(|i| {
            let l = &learners[owners[i]];
            Ok(executed_actions(&l.spec, &l.target_actor.forward_batch(b.next_obs[i].view())?))
        })
        .collect::<Result<_, LearnerError>>()?;
    (0..n_agents)
        .map(|i| {
            update_one(
                &mut learners[owners[i]],
                &b.obs[i],
                &b.next_obs[i],
                &b.actions,
                &next_joint,
                i,
                &b.rewards[i],
                &b.not_done,
                params,
            )
        })
        .collect()
}

/// Centralized-critic update with one learner per agent.
pub fn maddpg_update(
    learners: &mut [AgentLearner],
    batch: &[&Transition],
    params: &UpdateParams,
) -> Result<Vec<UpdateStats>, LearnerError> {
    let owners: Vec<usize> = (0..learners.len()).collect();
    maddpg_update_shared(learners, &owners, batch, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn transition(tag: f64) -> Transition {
        Transition {
            observations: vec![vec![tag; 2]],
            actions: vec![vec![tag]],
            rewards: vec![tag],
            next_observations: vec![vec![tag; 2]],
            done: true,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2, 1, 2, 1);
        assert_eq!(buf.len(), 0);
        for k in 1..=3 {
            buf.push(transition(k as f64)).unwrap();
        }
        let tags: Vec<f64> = buf.iter().map(|t| t.rewards[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
        assert_eq!(buf.inserted(), 3);
    }

    #[test]
    fn push_keeps_order_below_capacity() {
        let mut buf = ReplayBuffer::new(10, 1, 2, 1);
        for k in 0..7 {
            buf.push(transition(k as f64)).unwrap();
        }
        assert_eq!(buf.len(), 7);
        assert!(buf.iter().map(|t| t.rewards[0]).eq((0..7).map(|k| k as f64)));
    }

    #[test]
    fn push_rejects_bad_shapes() {
        let mut buf = ReplayBuffer::new(10, 2, 2, 1);
        assert!(matches!(buf.push(transition(0.0)), Err(LearnerError::ShapeMismatch(_))));
    }

    #[test]
    fn sampling_with_replacement_and_determinism() {
        let mut buf = ReplayBuffer::new(10, 1, 2, 1);
        buf.push(transition(4.0)).unwrap();
        let s = buf.sample(1, &mut derive_stream(0, "r")).unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(buf.sample(4, &mut derive_stream(0, "r")), Err(LearnerError::InsufficientData { .. })));
        for k in 0..9 {
            buf.push(transition(k as f64)).unwrap();
        }
        let a: Vec<f64> = buf.sample(8, &mut derive_stream(1, "r")).unwrap().iter().map(|t| t.rewards[0]).collect();
        let b: Vec<f64> = buf.sample(8, &mut derive_stream(1, "r")).unwrap().iter().map(|t| t.rewards[0]).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_through_grad_reaches_utterance_logits() {
        let spec = ActionSpec { force_dims: 2, vocab: 3, max_force: 1.0 };
        let out = ndarray::array![[0.2, -0.1, 0.2, 0.5, 0.3]];
        let executed = executed_actions(&spec, &out);
        assert_eq!(executed.row(0).to_vec(), vec![0.2, -0.1, 0.0, 1.0, 0.0]);
        let g = ndarray::array![[1.0, 1.0, 0.3, -0.2, 0.7]];
        let back = actions_to_output_grad(&spec, &out, g.view());
        assert_eq!(back, g);
    }

    #[test]
    fn force_clip_jacobian_matches_finite_differences() {
        let spec = ActionSpec { force_dims: 2, vocab: 0, max_force: 1.0 };
        let t = [0.9, -0.8];
        let g = [0.3, 0.6];
        let out = Array2::from_shape_vec((1, 2), t.to_vec()).unwrap();
        let ga = Array2::from_shape_vec((1, 2), g.to_vec()).unwrap();
        let analytic = actions_to_output_grad(&spec, &out, ga.view());
        let f = |t: [f64; 2]| {
            let a = executed_actions(&spec, &Array2::from_shape_vec((1, 2), t.to_vec()).unwrap());
            a[[0, 0]] * g[0] + a[[0, 1]] * g[1]
        };
        let h = 1e-6;
        for k in 0..2 {
            let (mut p, mut m) = (t, t);
            p[k] += h;
            m[k] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - analytic[[0, k]]).abs() < 1e-8);
        }
    }
}
