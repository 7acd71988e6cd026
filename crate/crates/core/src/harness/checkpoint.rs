use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::learner::AgentLearner;
use crate::model::WorldConfig;
use crate::nn::{Adam, Mlp};

use super::team::action_spec;
use super::train::write_file;
use super::{create_dir, HarnessError, Team};

pub const CHECKPOINT_VERSION: u32 = 1;

/// `manifest.json` of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// Hash of the `config.toml` stored next to the manifest.
    pub config_hash: String,
    /// Training episodes completed when the checkpoint was written.
    pub episodes: usize,
    /// Number of `agent_i` directories (1 when parameters are shared).
    pub learners: usize,
}

const NETS: [&str; 4] = ["actor", "critic", "target_actor", "target_critic"];
const OPTS: [&str; 2] = ["actor_opt", "critic_opt"];

fn bad(dir: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint { path: dir.display().to_string(), message: message.into() }
}

/// Writes `manifest.json`, `config.toml` and, per learner,
/// `agent_i/{actor,critic,target_actor,target_critic,actor_opt,critic_opt}.bin`.
pub fn save_checkpoint(team: &Team, cfg: &WorldConfig, episodes: usize, dir: &Path) -> Result<(), HarnessError> {
    create_dir(dir)?;
    for (i, l) in team.learners.iter().enumerate() {
        let agent_dir = create_dir(&dir.join(format!("agent_{i}")))?;
        for (name, net) in NETS.iter().zip([&l.actor, &l.critic, &l.target_actor, &l.target_critic]) {
            let path = agent_dir.join(format!("{name}.bin"));
            let mut w = BufWriter::new(File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
            net.write_to(&mut w)?;
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
        }
        for (name, opt) in OPTS.iter().zip([&l.actor_opt, &l.critic_opt]) {
            let path = agent_dir.join(format!("{name}.bin"));
            let mut w = BufWriter::new(File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
            opt.write_to(&mut w)?;
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
        }
    }
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let manifest =
        CheckpointManifest { version: CHECKPOINT_VERSION, config_hash: cfg.hash(), episodes, learners: team.learners.len() };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), json.as_bytes())
}

fn read_net(path: &Path) -> Result<Mlp, HarnessError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| HarnessError::io(path, e))?);
    Ok(Mlp::read_from(&mut r)?)
}

fn read_opt(path: &Path) -> Result<Adam, HarnessError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| HarnessError::io(path, e))?);
    Ok(Adam::read_from(&mut r)?)
}

/// Reads a checkpoint written by [`save_checkpoint`], checking the manifest
/// against the stored config.
pub fn load_checkpoint(dir: &Path) -> Result<(WorldConfig, Team, CheckpointManifest), HarnessError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| bad(dir, e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(bad(dir, format!("unsupported version {}", manifest.version)));
    }
    let cfg = WorldConfig::load(&dir.join("config.toml"))?;
    if cfg.hash() != manifest.config_hash {
        return Err(bad(dir, "config.toml does not match the manifest hash"));
    }
    let spec = action_spec(&cfg);
    let learners = (0..manifest.learners)
        .map(|i| {
            let agent_dir = dir.join(format!("agent_{i}"));
            let net = |name: &str| read_net(&agent_dir.join(format!("{name}.bin")));
            let opt = |name: &str| read_opt(&agent_dir.join(format!("{name}.bin")));
            Ok(AgentLearner {
                actor: net("actor")?,
                critic: net("critic")?,
                target_actor: net("target_actor")?,
                target_critic: net("target_critic")?,
                actor_opt: opt("actor_opt")?,
                critic_opt: opt("critic_opt")?,
                spec,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let team = Team::from_learners(&cfg, learners).map_err(|e| bad(dir, e.to_string()))?;
    Ok((cfg, team, manifest))
}
