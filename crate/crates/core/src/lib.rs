//! Multi-agent simulation and deterministic-policy-gradient training for
//! teams of robotic bodyguards protecting a VIP in a crowd.
//!
//! * [`model`]: shared types and the validated [`WorldConfig`]
//! * [`rng`]: labeled deterministic random streams
//! * [`threat`]: line of sight, threat level, instantaneous and total threat
//! * [`env`]: the particle world
//! * [`rewards`]: the four reward functions
//! * [`nn`]: dense networks, Adam, soft target updates
//! * [`learner`]: replay buffer, exploration, DDPG and MADDPG updates
//! * [`harness`]: training runs, evaluation, sweeps, reports and checkpoints
//! * [`api`]: wire types and operations of the HTTP service

pub mod api;
pub mod env;
pub mod fmt;
pub mod harness;
pub mod learner;
pub mod model;
pub mod nn;
pub mod rewards;
pub mod rng;
pub mod threat;

pub use model::{validate_config, ConfigError, EntityKind, EntityState, LearnerKind, RewardKind, Vec2, WorldConfig};
pub use rng::{derive_stream, RngStream};
