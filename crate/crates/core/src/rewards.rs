//! The four per-agent reward functions.
//!
//! All of them are evaluated on the post-step world. `threat_only` is shared by
//! every agent; the others add a per-agent distance band penalty and, for
//! [`RewardKind::CommPenalty`], a cost for speaking.

use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, WorldState};
use crate::model::{RewardKind, WorldConfig};
use crate::threat::{instantaneous_threat, ThreatParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub threat: ThreatParams,
    /// Minimum distance to keep from the VIP.
    pub min_distance: f64,
    /// Upper edge of the distance band.
    pub band_distance: f64,
    /// Cost of a non-silent utterance.
    pub comm_penalty: f64,
    /// Instantaneous threat above this counts as non-zero.
    pub threat_epsilon: f64,
}

impl RewardParams {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        RewardParams {
            threat: cfg.threat_params(),
            min_distance: cfg.min_distance,
            band_distance: cfg.band_distance,
            comm_penalty: cfg.comm_penalty,
            threat_epsilon: cfg.threat_epsilon,
        }
    }
}

/// Terms of one agent's reward; terms not used by the reward kind are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub threat_term: f64,
    pub distance_term: f64,
    pub comm_term: f64,
    pub total: f64,
}

/// `-1 + prod(1 - TL_i)`, i.e. minus the instantaneous threat.
pub fn threat_only(world: &WorldState, params: &ThreatParams) -> f64 {
    -instantaneous_threat(world, params).instantaneous
}

/// 0 when the agent's distance to the VIP lies in `[m, d]`, -1 otherwise.
pub fn distance_band(world: &WorldState, agent_index: usize, m: f64, d: f64) -> f64 {
    let dist = world.bodyguard(agent_index).position.distance(world.vip().position);
    if (m..=d).contains(&dist) {
        0.0
    } else {
        -1.0
    }
}

fn binary_term(world: &WorldState, params: &RewardParams) -> f64 {
    if instantaneous_threat(world, &params.threat).instantaneous > params.threat_epsilon {
        -1.0
    } else {
        0.0
    }
}

pub fn binary_threat(world: &WorldState, agent_index: usize, params: &RewardParams) -> f64 {
    binary_term(world, params) + distance_band(world, agent_index, params.min_distance, params.band_distance)
}

pub fn composite(world: &WorldState, agent_index: usize, params: &RewardParams) -> f64 {
    threat_only(world, &params.threat) + distance_band(world, agent_index, params.min_distance, params.band_distance)
}

pub fn comm_penalty(world: &WorldState, agent_index: usize, action: &AgentAction, params: &RewardParams) -> f64 {
    composite(world, agent_index, params) - speaking_cost(action, params)
}

fn speaking_cost(action: &AgentAction, params: &RewardParams) -> f64 {
    if action.speaks() {
        params.comm_penalty
    } else {
        0.0
    }
}

/// Reward of agent `agent_index` for `kind`, split into its terms.
pub fn breakdown(
    kind: RewardKind,
    world: &WorldState,
    agent_index: usize,
    action: &AgentAction,
    params: &RewardParams,
) -> RewardBreakdown {
    let band = || distance_band(world, agent_index, params.min_distance, params.band_distance);
    let mut r = RewardBreakdown::default();
    match kind {
        RewardKind::ThreatOnly => r.threat_term = threat_only(world, &params.threat),
        RewardKind::BinaryThreat => {
            r.threat_term = binary_term(world, params);
            r.distance_term = band();
        }
        RewardKind::Composite => {
            r.threat_term = threat_only(world, &params.threat);
            r.distance_term = band();
        }
        RewardKind::CommPenalty => {
            r.threat_term = threat_only(world, &params.threat);
            r.distance_term = band();
            r.comm_term = -speaking_cost(action, params);
        }
    }
    r.total = r.threat_term + r.distance_term + r.comm_term;
    r
}

/// Rewards of every agent for one transition.
pub fn team_rewards(cfg: &WorldConfig, world: &WorldState, actions: &[AgentAction]) -> Vec<f64> {
    let params = RewardParams::from_config(cfg);
    actions.iter().enumerate().map(|(i, a)| breakdown(cfg.reward_kind, world, i, a, &params).total).collect()
}
