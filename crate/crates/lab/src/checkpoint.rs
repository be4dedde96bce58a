//! Agent checkpoints as JSON.
//!
//! The file holds the agent configuration, the layer sizes, the flat
//! parameter vectors of the two online and two target networks, epsilon and
//! the replay-buffer position. Replay contents and optimizer moments are not
//! stored; a restored agent starts with an empty buffer and fresh Adam state.

use std::path::Path;

use mlb_core::agent::{AgentConfig, CdqlAgent};
use mlb_core::nn::Mlp;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const FORMAT: &str = "mlb-cdql-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub agent: AgentConfig,
    pub sizes: Vec<usize>,
    pub online: [Vec<f64>; 2],
    pub target: [Vec<f64>; 2],
    pub epsilon: f64,
    pub buffer_cursor: usize,
    pub buffer_len: usize,
    pub transitions_seen: u64,
}

impl Checkpoint {
    pub fn from_agent(agent: &CdqlAgent, seed: u64) -> Self {
        let params = |nets: &[Mlp; 2]| [nets[0].params().to_vec(), nets[1].params().to_vec()];
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            seed,
            agent: agent.config().clone(),
            sizes: agent.online()[0].sizes().to_vec(),
            online: params(agent.online()),
            target: params(agent.targets()),
            epsilon: agent.epsilon(),
            buffer_cursor: agent.buffer().cursor(),
            buffer_len: agent.buffer().len(),
            transitions_seen: agent.buffer().total_pushed(),
        }
    }

    pub fn into_agent(self) -> Result<CdqlAgent> {
        let net = |p: Vec<f64>| Mlp::from_params(&self.sizes, p);
        let [a, b] = self.online.clone();
        let [ta, tb] = self.target.clone();
        let online = [net(a)?, net(b)?];
        let target = [net(ta)?, net(tb)?];
        Ok(CdqlAgent::from_parts(
            self.agent,
            online,
            target,
            self.epsilon,
            self.seed,
        )?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| LabError::json(path, e))?;
        std::fs::write(path, text).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| LabError::json(path, e))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(LabError::Config(format!(
                "{}: not a version {VERSION} {FORMAT} file",
                path.display()
            )));
        }
        Ok(ck)
    }
}
