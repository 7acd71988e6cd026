//! Threat to the VIP from the crowd: line of sight, per-bystander threat
//! level, the combined instantaneous threat and its time integral.
//!
//! Landmark discs and bodyguard bodies block sight; bystanders do not shield
//! each other. Distances are centre to centre.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::WorldState;
use crate::model::{EntityKind, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatParams {
    /// Decay numerator constant.
    pub a: f64,
    /// Decay length scale.
    pub b: f64,
    pub safe_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatReport {
    /// Threat level of each bystander, in world order.
    pub per_bystander: Vec<f64>,
    /// `1 - prod(1 - per_bystander[i])`.
    pub instantaneous: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThreatError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

/// A disc that blocks line of sight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: Vec2,
    pub radius: f64,
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// 1.0 when the segment from `a` to `b` misses every occluder, 0.0 otherwise.
/// A disc blocks when its centre is strictly closer than its radius to the
/// segment. Coincident endpoints always see each other.
pub fn line_of_sight(a: Vec2, b: Vec2, obstacles: &[Occluder]) -> f64 {
    if a == b {
        return 1.0;
    }
    let blocked = obstacles.iter().any(|o| point_segment_distance(o.center, a, b) < o.radius);
    if blocked {
        0.0
    } else {
        1.0
    }
}

/// `exp(-A * dist / B)` for a visible bystander inside the safe distance, else 0.
pub fn threat_level(dist: f64, los: f64, params: &ThreatParams) -> f64 {
    if los <= 0.0 || dist >= params.safe_distance {
        return 0.0;
    }
    los * (-params.a * dist / params.b).exp()
}

/// Combines independent per-bystander threat levels into one probability.
pub fn combine(levels: &[f64]) -> f64 {
    1.0 - levels.iter().map(|t| 1.0 - t).product::<f64>()
}

fn occluders(world: &WorldState) -> Vec<Occluder> {
    world
        .entities
        .iter()
        .filter(|e| matches!(e.kind, EntityKind::Landmark | EntityKind::Bodyguard))
        .map(|e| Occluder { center: e.position, radius: e.radius })
        .collect()
}

pub fn instantaneous_threat(world: &WorldState, params: &ThreatParams) -> ThreatReport {
    let vip = world.vip().position;
    let blockers = occluders(world);
    let per_bystander: Vec<f64> = world
        .entities
        .iter()
        .filter(|e| e.kind == EntityKind::Bystander)
        .map(|b| {
            let dist = vip.distance(b.position);
            if dist >= params.safe_distance {
                return 0.0;
            }
            threat_level(dist, line_of_sight(vip, b.position, &blockers), params)
        })
        .collect();
    let instantaneous = combine(&per_bystander);
    ThreatReport { per_bystander, instantaneous }
}

/// Left-Riemann sum of the instantaneous threat over the trajectory.
pub fn total_threat(trajectory: &[WorldState], params: &ThreatParams, dt: f64) -> Result<f64, ThreatError> {
    if trajectory.is_empty() {
        return Err(ThreatError::EmptyTrajectory);
    }
    Ok(integrate(trajectory.iter().map(|w| instantaneous_threat(w, params).instantaneous), dt))
}

/// Left-Riemann sum of pre-computed instantaneous threats.
pub fn integrate(instantaneous: impl IntoIterator<Item = f64>, dt: f64) -> f64 {
    instantaneous.into_iter().sum::<f64>() * dt
}
