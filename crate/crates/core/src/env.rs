//! The 2D particle world.
//!
//! Entities are discs living in the square arena `[-w, w]^2`. One VIP walks
//! between landmarks, bystanders follow a random-waypoint walk, and the
//! bodyguards are driven by learned forces. Each bodyguard also broadcasts a
//! one-hot utterance that the others observe one step later.
//!
//! A step applies, in order: scripted VIP force, scripted bystander forces,
//! bodyguard forces, damped semi-implicit Euler integration with speed
//! clipping, disc contact resolution and finally the soft arena walls.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::sig9;
use crate::model::{EntityKind, EntityState, Vec2, WorldConfig};
use crate::rng::RngStream;
use crate::threat::{instantaneous_threat, ThreatParams};

const MAX_SPAWN_TRIES: usize = 1000;
const RESTITUTION: f64 = 0.5;
/// Extra clearance at which the VIP counts as having reached its goal landmark.
const GOAL_SLACK: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum EnvError {
    #[error("could not place {kind} #{index} without overlap after {MAX_SPAWN_TRIES} tries")]
    SpawnFailure { kind: String, index: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("action of agent {agent} is not finite")]
    NonFiniteAction { agent: usize },
    #[error("utterance of agent {agent} has length {got}, expected {expected}")]
    UtteranceLength { agent: usize, expected: usize, got: usize },
    #[error("episode already finished at step {step}")]
    EpisodeOver { step: usize },
    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },
}

/// One-hot utterance with index 0 (silence) set.
pub fn silence(vocab: usize) -> Vec<f64> {
    one_hot(0, vocab)
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub force: Vec2,
    /// One-hot symbol; index 0 is silence.
    pub utterance: Vec<f64>,
}

impl AgentAction {
    pub fn silent(force: Vec2, vocab: usize) -> Self {
        AgentAction { force, utterance: silence(vocab) }
    }

    pub fn utterance_index(&self) -> usize {
        argmax(&self.utterance)
    }

    pub fn speaks(&self) -> bool {
        self.utterance_index() != 0
    }
}

/// Full Markov state of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Fixed order: VIP, bodyguards, bystanders, landmarks.
    pub entities: Vec<EntityState>,
    /// Last utterance of each bodyguard.
    pub utterances: Vec<Vec<f64>>,
    pub step_index: usize,
    /// Landmark (index among landmarks) the VIP is walking to.
    pub vip_goal: Option<usize>,
    /// Current waypoint of each bystander.
    pub waypoints: Vec<Vec2>,
}

impl WorldState {
    /// Wraps an ordered entity list with silent utterances, no VIP goal and
    /// bystander waypoints at their current positions.
    pub fn from_entities(entities: Vec<EntityState>, vocab: usize) -> Self {
        let n_bodyguards = entities.iter().filter(|e| e.kind == EntityKind::Bodyguard).count();
        let waypoints =
            entities.iter().filter(|e| e.kind == EntityKind::Bystander).map(|e| e.position).collect();
        WorldState {
            entities,
            utterances: vec![silence(vocab); n_bodyguards],
            step_index: 0,
            vip_goal: None,
            waypoints,
        }
    }

    fn count(&self, kind: EntityKind) -> usize {
        self.entities.iter().filter(|e| e.kind == kind).count()
    }

    pub fn n_bodyguards(&self) -> usize {
        self.count(EntityKind::Bodyguard)
    }

    pub fn bodyguard_range(&self) -> Range<usize> {
        1..1 + self.n_bodyguards()
    }

    pub fn bystander_range(&self) -> Range<usize> {
        let start = 1 + self.n_bodyguards();
        start..start + self.count(EntityKind::Bystander)
    }

    pub fn landmark_range(&self) -> Range<usize> {
        let start = self.bystander_range().end;
        start..self.entities.len()
    }

    pub fn vip(&self) -> &EntityState {
        &self.entities[0]
    }

    pub fn bodyguard(&self, agent_index: usize) -> &EntityState {
        &self.entities[1 + agent_index]
    }

    fn goal_position(&self) -> Option<Vec2> {
        self.vip_goal.map(|g| self.entities[self.landmark_range().start + g].position)
    }
}

fn overlaps(placed: &[EntityState], pos: Vec2, radius: f64) -> bool {
    placed.iter().any(|e| e.position.distance(pos) <= e.radius + radius)
}

fn uniform_in_arena(rng: &mut RngStream, halfwidth: f64, radius: f64) -> Vec2 {
    let lim = (halfwidth - radius).max(0.0);
    Vec2::new(rng.uniform_range(-lim, lim), rng.uniform_range(-lim, lim))
}

fn place(
    placed: &mut Vec<EntityState>,
    kind: EntityKind,
    index: usize,
    radius: f64,
    mut propose: impl FnMut() -> Option<Vec2>,
) -> Result<(), EnvError> {
    for _ in 0..MAX_SPAWN_TRIES {
        if let Some(pos) = propose() {
            if !overlaps(placed, pos, radius) {
                placed.push(EntityState { kind, position: pos, velocity: Vec2::ZERO, radius });
                return Ok(());
            }
        }
    }
    Err(EnvError::SpawnFailure { kind: kind.as_str().to_string(), index })
}

/// Samples a fresh episode start.
pub fn reset(cfg: &WorldConfig, rng: &mut RngStream) -> Result<WorldState, EnvError> {
    let w = cfg.world_halfwidth;
    let ar = cfg.agent_radius;
    let lr = cfg.landmark_radius;

    // Landmarks are sampled first so the mobile entities avoid them, then
    // moved to the end to respect the entity order.
    let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
    for i in 0..cfg.n_landmarks {
        place(&mut landmarks, EntityKind::Landmark, i, lr, || Some(uniform_in_arena(rng, w, lr)))?;
    }
    let mut placed = landmarks.clone();
    place(&mut placed, EntityKind::Vip, 0, ar, || Some(uniform_in_arena(rng, w, ar)))?;
    let vip_pos = placed.last().expect("vip placed").position;
    let spawn_radius = 3.0 * cfg.safe_distance;
    for i in 0..cfg.n_bodyguards {
        place(&mut placed, EntityKind::Bodyguard, i, ar, || {
            let r = spawn_radius * rng.uniform().sqrt();
            let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
            let p = vip_pos + Vec2::new(r * theta.cos(), r * theta.sin());
            (p.x.abs() <= w - ar && p.y.abs() <= w - ar).then_some(p)
        })?;
    }
    for i in 0..cfg.n_bystanders {
        place(&mut placed, EntityKind::Bystander, i, ar, || Some(uniform_in_arena(rng, w, ar)))?;
    }
    let mut entities: Vec<EntityState> = placed.split_off(cfg.n_landmarks);
    entities.extend(landmarks);

    let vip_goal = (cfg.n_landmarks > 0).then(|| rng.index(cfg.n_landmarks));
    let waypoints = (0..cfg.n_bystanders).map(|_| uniform_in_arena(rng, w, ar)).collect();
    Ok(WorldState {
        entities,
        utterances: vec![silence(cfg.comm_vocab); cfg.n_bodyguards],
        step_index: 0,
        vip_goal,
        waypoints,
    })
}

fn check_actions(world: &WorldState, actions: &[AgentAction], cfg: &WorldConfig) -> Result<(), EnvError> {
    let n = world.n_bodyguards();
    if actions.len() != n {
        return Err(EnvError::ActionCountMismatch { expected: n, got: actions.len() });
    }
    for (agent, a) in actions.iter().enumerate() {
        if !a.force.is_finite() || a.utterance.iter().any(|u| !u.is_finite()) {
            return Err(EnvError::NonFiniteAction { agent });
        }
        if a.utterance.len() != cfg.comm_vocab {
            return Err(EnvError::UtteranceLength { agent, expected: cfg.comm_vocab, got: a.utterance.len() });
        }
    }
    Ok(())
}

/// Advances the world by one step. Returns the next state and whether the
/// episode has reached its final step.
pub fn step(
    world: &WorldState,
    actions: &[AgentAction],
    cfg: &WorldConfig,
    rng: &mut RngStream,
) -> Result<(WorldState, bool), EnvError> {
    if world.step_index >= cfg.episode_length {
        return Err(EnvError::EpisodeOver { step: world.step_index });
    }
    check_actions(world, actions, cfg)?;

    let mut next = world.clone();
    let mut forces = vec![Vec2::ZERO; next.entities.len()];

    // VIP walks to its goal landmark and picks another one on arrival.
    let landmarks = next.landmark_range();
    if let Some(goal) = next.goal_position() {
        let vip = next.entities[0];
        let reach = vip.radius + cfg.landmark_radius + GOAL_SLACK;
        if vip.position.distance(goal) < reach && landmarks.len() > 1 {
            let current = next.vip_goal.expect("goal set");
            let mut pick = rng.index(landmarks.len() - 1);
            if pick >= current {
                pick += 1;
            }
            next.vip_goal = Some(pick);
        }
        let goal = next.goal_position().expect("goal set");
        forces[0] = ((goal - vip.position) * cfg.vip_gain).clamp_norm(cfg.max_force);
    }

    // Bystanders: random-waypoint walk.
    for (k, idx) in next.bystander_range().enumerate() {
        let b = next.entities[idx];
        let arrived = b.position.distance(next.waypoints[k]) < 2.0 * b.radius;
        if rng.bernoulli(cfg.bystander_waypoint_prob) || arrived {
            next.waypoints[k] = uniform_in_arena(rng, cfg.world_halfwidth, b.radius);
        }
        let to = next.waypoints[k] - b.position;
        let len = to.norm();
        if len > 1e-9 {
            forces[idx] = (to * (cfg.bystander_force / len)).clamp_norm(cfg.max_force);
        }
    }

    for (i, idx) in next.bodyguard_range().enumerate() {
        forces[idx] = actions[i].force.clamp_norm(cfg.max_force);
    }

    // Integrate (unit mass).
    for (e, f) in next.entities.iter_mut().zip(&forces) {
        if !e.kind.is_mobile() {
            continue;
        }
        e.velocity = (e.velocity * (1.0 - cfg.damping) + *f * cfg.dt).clamp_norm(cfg.max_speed);
        e.position += e.velocity * cfg.dt;
    }

    resolve_contacts(&mut next.entities, cfg);
    apply_walls(&mut next.entities, cfg);

    for (i, a) in actions.iter().enumerate() {
        next.utterances[i] = if cfg.communication_enabled {
            one_hot(a.utterance_index(), cfg.comm_vocab)
        } else {
            silence(cfg.comm_vocab)
        };
    }
    next.step_index += 1;
    let done = next.step_index == cfg.episode_length;
    Ok((next, done))
}

fn inverse_mass(e: &EntityState) -> f64 {
    if e.kind.is_mobile() {
        1.0
    } else {
        0.0
    }
}

/// Pushes overlapping discs apart and applies a restitution impulse to
/// approaching pairs. Landmarks are immovable.
fn resolve_contacts(entities: &mut [EntityState], cfg: &WorldConfig) {
    let n = entities.len();
    for i in 0..n {
        for j in i + 1..n {
            let (inv_i, inv_j) = (inverse_mass(&entities[i]), inverse_mass(&entities[j]));
            let inv_sum = inv_i + inv_j;
            if inv_sum == 0.0 {
                continue;
            }
            let delta = entities[i].position - entities[j].position;
            let dist = delta.norm();
            let overlap = entities[i].radius + entities[j].radius - dist;
            if overlap <= 0.0 {
                continue;
            }
            let normal = if dist > 1e-12 { delta * (1.0 / dist) } else { Vec2::new(1.0, 0.0) };
            let push = cfg.contact_stiffness * overlap / inv_sum;
            entities[i].position += normal * (push * inv_i);
            entities[j].position -= normal * (push * inv_j);

            let closing = (entities[i].velocity - entities[j].velocity).dot(normal);
            if closing < 0.0 {
                let impulse = -(1.0 + RESTITUTION) * closing / inv_sum;
                entities[i].velocity += normal * (impulse * inv_i);
                entities[j].velocity -= normal * (impulse * inv_j);
            }
        }
    }
    for e in entities.iter_mut().filter(|e| e.kind.is_mobile()) {
        e.velocity = e.velocity.clamp_norm(cfg.max_speed);
    }
}

/// Soft wall: a disc crossing the boundary is pushed back in proportion to
/// its penetration; centres never leave the arena.
fn apply_walls(entities: &mut [EntityState], cfg: &WorldConfig) {
    let w = cfg.world_halfwidth;
    let push = |p: &mut f64, v: &mut f64, r: f64| {
        let lim = w - r;
        if *p > lim {
            *v -= cfg.wall_stiffness * (*p - lim) * cfg.dt;
        } else if *p < -lim {
            *v += cfg.wall_stiffness * (-lim - *p) * cfg.dt;
        }
        if *p > w {
            *p = w;
            *v = v.min(0.0);
        } else if *p < -w {
            *p = -w;
            *v = v.max(0.0);
        }
    };
    for e in entities.iter_mut().filter(|e| e.kind.is_mobile()) {
        push(&mut e.position.x, &mut e.velocity.x, e.radius);
        push(&mut e.position.y, &mut e.velocity.y, e.radius);
        e.velocity = e.velocity.clamp_norm(cfg.max_speed);
    }
}

/// Observation length: four numbers per entity, four for the observer's own
/// absolute state and one utterance vector per agent.
pub fn observation_len(cfg: &WorldConfig) -> usize {
    4 * cfg.n_entities() + 4 + cfg.n_bodyguards * cfg.comm_vocab
}

/// Flat observation of agent `agent_index`:
/// `[rel_pos_j, vel_j for every entity j] ++ [own pos, own vel] ++ [utterance_k for every agent k]`.
/// Relative positions are `pos_j - pos_agent`.
pub fn observe(world: &WorldState, agent_index: usize, cfg: &WorldConfig) -> Result<Vec<f64>, EnvError> {
    let n = world.n_bodyguards();
    if agent_index >= n {
        return Err(EnvError::IndexOutOfRange { index: agent_index, n });
    }
    let me = world.bodyguard(agent_index);
    let mut obs = Vec::with_capacity(observation_len(cfg));
    for e in &world.entities {
        let rel = e.position - me.position;
        obs.extend_from_slice(&[rel.x, rel.y, e.velocity.x, e.velocity.y]);
    }
    obs.extend_from_slice(&[me.position.x, me.position.y, me.velocity.x, me.velocity.y]);
    for u in &world.utterances {
        if cfg.communication_enabled {
            obs.extend_from_slice(u);
        } else {
            obs.extend(silence(cfg.comm_vocab));
        }
    }
    Ok(obs)
}

/// Writes one CSV row per state: step index, every entity's kind, position
/// and velocity, every agent's utterance index and the instantaneous threat.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    trajectory: &[WorldState],
    params: &ThreatParams,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let Some(first) = trajectory.first() else {
        wtr.write_record(["step_index", "threat"])?;
        return wtr.flush().map_err(Into::into);
    };
    let mut header = vec!["step_index".to_string()];
    for j in 0..first.entities.len() {
        for f in ["kind", "x", "y", "vx", "vy"] {
            header.push(format!("e{j}_{f}"));
        }
    }
    for k in 0..first.utterances.len() {
        header.push(format!("u{k}"));
    }
    header.push("threat".into());
    wtr.write_record(&header)?;
    for state in trajectory {
        let mut row = vec![state.step_index.to_string()];
        for e in &state.entities {
            row.push(e.kind.as_str().to_string());
            for v in [e.position.x, e.position.y, e.velocity.x, e.velocity.y] {
                row.push(sig9(v));
            }
        }
        for u in &state.utterances {
            row.push(argmax(u).to_string());
        }
        row.push(sig9(instantaneous_threat(state, params).instantaneous));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
