//! Shared domain types and the validated world/training configuration.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or vector in the 2D arena, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rescales the vector so its length does not exceed `max_len`.
    pub fn clamp_norm(self, max_len: f64) -> Vec2 {
        let n = self.norm();
        if n > max_len && n > 0.0 {
            self * (max_len / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Vip,
    Bodyguard,
    Bystander,
    Landmark,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Vip => "vip",
            EntityKind::Bodyguard => "bodyguard",
            EntityKind::Bystander => "bystander",
            EntityKind::Landmark => "landmark",
        }
    }

    pub fn is_mobile(self) -> bool {
        self != EntityKind::Landmark
    }
}

/// Physical state of one disc-shaped entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub kind: EntityKind,
    pub position: Vec2,
    /// World units per unit time.
    pub velocity: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    ThreatOnly,
    BinaryThreat,
    Composite,
    CommPenalty,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [
        RewardKind::ThreatOnly,
        RewardKind::BinaryThreat,
        RewardKind::Composite,
        RewardKind::CommPenalty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::ThreatOnly => "ThreatOnly",
            RewardKind::BinaryThreat => "BinaryThreat",
            RewardKind::Composite => "Composite",
            RewardKind::CommPenalty => "CommPenalty",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RewardKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewardKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown reward kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    Ddpg,
    Maddpg,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Ddpg => "Ddpg",
            LearnerKind::Maddpg => "Maddpg",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Ddpg" => Ok(LearnerKind::Ddpg),
            "Maddpg" => Ok(LearnerKind::Maddpg),
            _ => Err(format!("unknown learner kind `{s}`")),
        }
    }
}

/// Every scenario, physics, threat, reward and training knob in one record.
///
/// The on-disk key names are exactly the serde names below; unknown keys are
/// rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    // scenario
    pub n_bodyguards: usize,
    pub n_bystanders: usize,
    pub n_landmarks: usize,
    pub world_halfwidth: f64,
    pub agent_radius: f64,
    pub landmark_radius: f64,

    // physics
    pub dt: f64,
    pub damping: f64,
    pub max_speed: f64,
    pub max_force: f64,
    pub episode_length: usize,
    /// Proportional gain of the VIP's pursuit of its goal landmark.
    pub vip_gain: f64,
    /// Magnitude of the force a bystander applies toward its waypoint.
    pub bystander_force: f64,
    /// Per-step probability that a bystander abandons its waypoint.
    pub bystander_waypoint_prob: f64,
    pub contact_stiffness: f64,
    pub wall_stiffness: f64,

    // threat
    #[serde(rename = "threat_A")]
    pub threat_a: f64,
    #[serde(rename = "threat_B")]
    pub threat_b: f64,
    pub safe_distance: f64,

    // rewards
    pub min_distance: f64,
    pub band_distance: f64,
    pub comm_penalty: f64,
    pub comm_vocab: usize,
    pub communication_enabled: bool,
    /// Instantaneous threat above this counts as "non-zero" for the binary reward.
    pub threat_epsilon: f64,
    pub reward_kind: RewardKind,

    // learning
    pub learner_kind: LearnerKind,
    pub gamma: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between gradient updates.
    pub update_every: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip_norm: f64,
    pub exploration_sigma: f64,
    /// Probability of replacing the greedy utterance with a uniform symbol while exploring.
    pub utterance_epsilon: f64,
    pub hidden_sizes: Vec<usize>,
    pub shared_params: bool,

    // harness
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub eval_interval: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let safe_distance = 0.5;
        WorldConfig {
            n_bodyguards: 2,
            n_bystanders: 10,
            n_landmarks: 3,
            world_halfwidth: 1.0,
            agent_radius: 0.05,
            landmark_radius: 0.1,
            dt: 0.1,
            damping: 0.25,
            max_speed: 1.0,
            max_force: 1.0,
            episode_length: 25,
            vip_gain: 0.5,
            bystander_force: 0.3,
            bystander_waypoint_prob: 0.05,
            contact_stiffness: 0.5,
            wall_stiffness: 50.0,
            threat_a: 3.0,
            threat_b: safe_distance,
            safe_distance,
            min_distance: 0.1,
            band_distance: safe_distance,
            comm_penalty: 0.05,
            comm_vocab: 10,
            communication_enabled: true,
            threat_epsilon: 1e-9,
            reward_kind: RewardKind::Composite,
            learner_kind: LearnerKind::Maddpg,
            gamma: 0.95,
            tau: 0.01,
            replay_capacity: 1_000_000,
            batch_size: 128,
            update_every: 1,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            grad_clip_norm: 0.5,
            exploration_sigma: 0.1,
            utterance_epsilon: 0.1,
            hidden_sizes: vec![64, 64],
            shared_params: false,
            train_episodes: 10_000,
            eval_episodes: 20,
            eval_interval: 100,
            checkpoint_interval: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        ConfigError { field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot apply override `{0}`: {1}")]
    Override(String, String),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn unit_closed(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must lie in [0, 1], got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be >= {min}, got {v}")))
    }
}

/// Checks every invariant of [`WorldConfig`] in field order and returns the
/// config unchanged, or an error naming the first violated field.
pub fn validate_config(cfg: WorldConfig) -> Result<WorldConfig, ConfigError> {
    if !(1..=8).contains(&cfg.n_bodyguards) {
        return Err(ConfigError::new(
            "n_bodyguards",
            format!("must lie in [1, 8], got {}", cfg.n_bodyguards),
        ));
    }
    positive("world_halfwidth", cfg.world_halfwidth)?;
    positive("agent_radius", cfg.agent_radius)?;
    positive("landmark_radius", cfg.landmark_radius)?;
    positive("dt", cfg.dt)?;
    if !(0.0..1.0).contains(&cfg.damping) {
        return Err(ConfigError::new("damping", format!("must lie in [0, 1), got {}", cfg.damping)));
    }
    positive("max_speed", cfg.max_speed)?;
    positive("max_force", cfg.max_force)?;
    at_least("episode_length", cfg.episode_length, 1)?;
    non_negative("vip_gain", cfg.vip_gain)?;
    non_negative("bystander_force", cfg.bystander_force)?;
    unit_closed("bystander_waypoint_prob", cfg.bystander_waypoint_prob)?;
    unit_closed("contact_stiffness", cfg.contact_stiffness)?;
    non_negative("wall_stiffness", cfg.wall_stiffness)?;
    positive("threat_A", cfg.threat_a)?;
    positive("threat_B", cfg.threat_b)?;
    positive("safe_distance", cfg.safe_distance)?;
    non_negative("min_distance", cfg.min_distance)?;
    if !(cfg.band_distance.is_finite() && cfg.band_distance > cfg.min_distance) {
        return Err(ConfigError::new(
            "band_distance",
            format!("must exceed min_distance ({}), got {}", cfg.min_distance, cfg.band_distance),
        ));
    }
    if cfg.band_distance > cfg.safe_distance {
        return Err(ConfigError::new(
            "band_distance",
            format!("must not exceed safe_distance ({}), got {}", cfg.safe_distance, cfg.band_distance),
        ));
    }
    if cfg.safe_distance > 2.0 * cfg.world_halfwidth {
        return Err(ConfigError::new(
            "safe_distance",
            format!("must not exceed 2*world_halfwidth ({}), got {}", 2.0 * cfg.world_halfwidth, cfg.safe_distance),
        ));
    }
    non_negative("comm_penalty", cfg.comm_penalty)?;
    at_least("comm_vocab", cfg.comm_vocab, 1)?;
    non_negative("threat_epsilon", cfg.threat_epsilon)?;
    unit_closed("gamma", cfg.gamma)?;
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(ConfigError::new("tau", format!("must lie in (0, 1], got {}", cfg.tau)));
    }
    at_least("replay_capacity", cfg.replay_capacity, 1)?;
    at_least("batch_size", cfg.batch_size, 1)?;
    at_least("update_every", cfg.update_every, 1)?;
    positive("actor_lr", cfg.actor_lr)?;
    positive("critic_lr", cfg.critic_lr)?;
    positive("grad_clip_norm", cfg.grad_clip_norm)?;
    non_negative("exploration_sigma", cfg.exploration_sigma)?;
    unit_closed("utterance_epsilon", cfg.utterance_epsilon)?;
    if cfg.hidden_sizes.contains(&0) {
        return Err(ConfigError::new("hidden_sizes", "layer widths must be >= 1"));
    }
    at_least("eval_interval", cfg.eval_interval, 1)?;
    at_least("checkpoint_interval", cfg.checkpoint_interval, 1)?;
    Ok(cfg)
}

impl WorldConfig {
    pub fn validate(self) -> Result<Self, ConfigError> {
        validate_config(self)
    }

    /// Canonical TOML text. Parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("WorldConfig always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigFileError> {
        toml::from_str(text).map_err(|e| ConfigFileError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigFileError> {
        serde_json::from_str(text).map_err(|e| ConfigFileError::Parse(e.to_string()))
    }

    /// Reads a `.json` or TOML config file and validates it.
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigFileError::Io { path: path.display().to_string(), source })?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg.validate()?)
    }

    /// Applies `key=value` overrides, where `value` is written as a TOML value
    /// (`seed=7`, `reward_kind="ThreatOnly"`, `hidden_sizes=[32,32]`). Bare
    /// words are accepted as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigFileError> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("canonical TOML parses");
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigFileError::Override(raw.to_string(), "expected key=value".into()))?;
            let key = key.trim();
            let value = value.trim();
            let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(value.to_string()),
            };
            table.insert(key.to_string(), parsed);
        }
        let cfg: WorldConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigFileError::Parse(e.to_string()))?;
        Ok(cfg.validate()?)
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn threat_params(&self) -> crate::threat::ThreatParams {
        crate::threat::ThreatParams { a: self.threat_a, b: self.threat_b, safe_distance: self.safe_distance }
    }

    pub fn n_entities(&self) -> usize {
        1 + self.n_bodyguards + self.n_bystanders + self.n_landmarks
    }

    /// Largest possible total threat of one episode.
    pub fn max_total_threat(&self) -> f64 {
        self.episode_length as f64 * self.dt
    }

    /// Replay transitions collected before gradient updates begin.
    pub fn warmup_transitions(&self) -> usize {
        10 * self.batch_size
    }
}
