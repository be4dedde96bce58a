//! TOML configuration. Every section and key is optional; omitted values
//! take the defaults of the corresponding core types. Unknown keys are
//! rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mlb_core::agent::AgentConfig;
use mlb_core::env::{ActionMode, ActionSpace, RewardConfig, DEFAULT_CIO_VALUES};
use mlb_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cdql,
    A3,
    Rebuha,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Cdql, Algorithm::A3, Algorithm::Rebuha];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cdql => "cdql",
            Algorithm::A3 => "a3",
            Algorithm::Rebuha => "rebuha",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected cdql, a3 or rebuha)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    pub mode: ActionMode,
    pub cio_values: Vec<f64>,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            mode: ActionMode::Permutations,
            cio_values: DEFAULT_CIO_VALUES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub algorithms: Vec<Algorithm>,
    pub ue_counts: Vec<usize>,
    pub mobility_fractions: Vec<f64>,
    pub speed_mps: f64,
    /// Only used to derive `seeds = 1..=replications` when no seeds are given.
    pub replications: Option<usize>,
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub steps_per_episode: usize,
    pub output_dir: PathBuf,
    /// Also write the trained networks of every CDQL run.
    pub save_checkpoints: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            ue_counts: vec![30, 35, 40, 45, 50],
            mobility_fractions: vec![0.0],
            speed_mps: 20.0,
            replications: None,
            seeds: (1..=15).collect(),
            episodes: 150,
            steps_per_episode: 50,
            output_dir: PathBuf::from("results"),
            save_checkpoints: false,
        }
    }
}

impl ExperimentPlan {
    /// Small profile for CI: 30 UEs, 3 seeds, 40 episodes.
    pub fn apply_quick(&mut self) {
        self.ue_counts = vec![30];
        self.seeds = vec![1, 2, 3];
        self.replications = None;
        self.episodes = 40;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(LabError::Config(format!("plan.{key}: {why}")));
        if self.algorithms.is_empty() {
            return bad("algorithms", "must not be empty");
        }
        if self.ue_counts.is_empty() {
            return bad("ue_counts", "must not be empty");
        }
        if self.ue_counts.contains(&0) {
            return bad("ue_counts", "every count must be at least 1");
        }
        if self.mobility_fractions.is_empty() {
            return bad("mobility_fractions", "must not be empty");
        }
        if self
            .mobility_fractions
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return bad("mobility_fractions", "every fraction must lie in [0, 1]");
        }
        if !(self.speed_mps >= 0.0 && self.speed_mps.is_finite()) {
            return bad("speed_mps", "must be finite and >= 0");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "must be distinct");
        }
        if let Some(r) = self.replications {
            if r != self.seeds.len() {
                return bad(
                    "replications",
                    &format!("{r} does not match the {} seeds given", self.seeds.len()),
                );
            }
        }
        if self.steps_per_episode == 0 {
            return bad("steps_per_episode", "must be at least 1");
        }
        Ok(())
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    /// Template for every scenario. `n_ues`, `mobility_fraction`,
    /// `speed_mps` and `policy` come from the plan instead.
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub action: ActionConfig,
    pub plan: ExperimentPlan,
}

/// Keys of `[sim]` that the plan owns.
const PLAN_OWNED: [(&str, &str); 4] = [
    ("n_ues", "plan.ue_counts"),
    ("mobility_fraction", "plan.mobility_fractions"),
    ("speed_mps", "plan.speed_mps"),
    ("policy", "plan.algorithms"),
];

impl LabConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| LabError::Config(e.message().trim().to_string()))?;
        if let Some(toml::Value::Table(sim)) = raw.get("sim") {
            for (key, owner) in PLAN_OWNED {
                if sim.contains_key(key) {
                    return Err(LabError::Config(format!("sim.{key}: set {owner} instead")));
                }
            }
        }
        let mut cfg: LabConfig = serde_path_to_error::deserialize(toml::Value::Table(raw.clone()))
            .map_err(|e| {
                let path = e.path().to_string();
                LabError::Config(format!("{path}: {}", e.into_inner()))
            })?;
        let resolved = toml::Value::try_from(&cfg)
            .map_err(|e| LabError::Config(format!("cannot re-serialize config: {e}")))?;
        reject_unknown(&raw, &resolved, "")?;
        if raw.get("plan").and_then(|p| p.get("seeds")).is_none() {
            if let Some(r) = cfg.plan.replications {
                cfg.plan.seeds = (1..=r as u64).collect();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        fn section(name: &'static str) -> impl Fn(mlb_core::Error) -> LabError {
            move |e| LabError::Config(format!("[{name}] {e}"))
        }
        self.sim.validate().map_err(section("sim"))?;
        self.agent.validate().map_err(section("agent"))?;
        self.reward.validate().map_err(section("reward"))?;
        self.action_space().map_err(section("action"))?;
        self.plan.validate()?;
        for &n in &self.plan.ue_counts {
            if n < self.sim.n_cbr_ues {
                return Err(LabError::Config(format!(
                    "plan.ue_counts: {n} is below sim.n_cbr_ues = {}",
                    self.sim.n_cbr_ues
                )));
            }
        }
        Ok(())
    }

    /// One offset per cell.
    pub fn action_space(&self) -> mlb_core::Result<ActionSpace> {
        ActionSpace::new(
            self.action.cio_values.clone(),
            self.sim.n_cells,
            self.action.mode,
        )
    }
}

fn reject_unknown(given: &toml::Table, known: &toml::Value, prefix: &str) -> Result<()> {
    for (key, value) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        let Some(reference) = known.get(key) else {
            return Err(LabError::Config(format!("unknown key `{path}`")));
        };
        if let (toml::Value::Table(sub), toml::Value::Table(_)) = (value, reference) {
            reject_unknown(sub, reference, &path)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = LabConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, LabConfig::default());
        assert_eq!(cfg.sim.handover.hysteresis_db, 2.0);
        assert_eq!(cfg.sim.handover.ttt_ms, 8);
        assert_eq!(cfg.agent.gamma, 0.95);
        assert_eq!(cfg.plan.seeds.len(), 15);
        assert_eq!(cfg.action_space().unwrap().size(), 210);
    }

    #[test]
    fn negative_hysteresis_is_rejected() {
        let err = LabConfig::from_toml_str("[sim.handover]\nhysteresis_db = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("hysteresis_db"), "{err}");
    }

    #[test]
    fn ue_counts_override() {
        let cfg = LabConfig::from_toml_str("[plan]\nue_counts = [30]\n").unwrap();
        assert_eq!(cfg.plan.ue_counts, vec![30]);
        assert_eq!(cfg.plan.episodes, 150);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = LabConfig::from_toml_str("[agent]\ngama = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("agent.gama"), "{err}");
        let err = LabConfig::from_toml_str(
            "[sim.cbr_flow]\npayload_bytes = 10\nkind = \"cbr\"\ninterval_ms = 5.0\nextra = 1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sim.cbr_flow.extra"), "{err}");
        let err = LabConfig::from_toml_str("[nonsense]\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = LabConfig::from_toml_str("[sim.radio]\nn_rb = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("sim.radio.n_rb"), "{err}");
    }

    #[test]
    fn plan_owned_sim_keys_are_refused() {
        let err = LabConfig::from_toml_str("[sim]\nn_ues = 40\n").unwrap_err();
        assert!(err.to_string().contains("plan.ue_counts"), "{err}");
    }

    #[test]
    fn replications_derive_seeds() {
        let cfg = LabConfig::from_toml_str("[plan]\nreplications = 4\n").unwrap();
        assert_eq!(cfg.plan.seeds, vec![1, 2, 3, 4]);
        assert!(LabConfig::from_toml_str("[plan]\nreplications = 2\nseeds = [1]\n").is_err());
    }

    #[test]
    fn optional_sim_keys_are_accepted() {
        let cfg = LabConfig::from_toml_str("[sim]\nedge_disc_center_m = 200.0\n").unwrap();
        assert_eq!(cfg.sim.edge_disc_center_m, Some(200.0));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
    }
}
